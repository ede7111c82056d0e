/** Browser bootstrap: hash routing and DOM event wiring.
 *
 * This is the only file that touches `document`; all state lives in the
 * models, all markup comes from render.ts.
 */

import { ApiClient, ApiError } from "./api.js";
import { ProcessConsoleModel } from "./console.js";
import { InboxModel } from "./inbox.js";
import { PageViewModel } from "./pageview.js";
import { ConceptPicker } from "./picker.js";
import {
  renderFacetMenu,
  renderForm,
  renderInbox,
  renderNotFound,
  renderNotificationBadge,
  renderPickerOptions,
  renderResults,
  renderTicker,
  esc,
} from "./render.js";
import { TaskFormModel } from "./taskform.js";

const api = new ApiClient("");
const inbox = new InboxModel(api);
const pageView = new PageViewModel(api);
const consoleModel = new ProcessConsoleModel(api);
const picker = new ConceptPicker(api);

let activeForm: TaskFormModel | null = null;
let pickerTarget: HTMLInputElement | null = null;
let watchedInstance: string | null = null;
let polling = false;

function $(selector: string): HTMLElement {
  const el = document.querySelector(selector);
  if (!el) throw new Error(`missing element ${selector}`);
  return el as HTMLElement;
}

function setMain(html: string): void {
  $("#main").innerHTML = html;
}

async function route(): Promise<void> {
  const hash = location.hash || "#/inbox";
  try {
    if (hash.startsWith("#/page/")) {
      await showPage(decodeURIComponent(hash.slice("#/page/".length)));
    } else if (hash.startsWith("#/console")) {
      await showConsole();
    } else {
      await showInbox();
    }
  } catch (error) {
    if (error instanceof ApiError && error.status === 401) {
      setMain('<div class="form-error">Please log in first.</div>');
    } else {
      setMain(`<div class="form-error">${esc(String(error))}</div>`);
    }
  }
}

async function showPage(name: string): Promise<void> {
  const state = await pageView.load(name);
  if (state.kind === "not-found") {
    setMain(renderNotFound(name));
    return;
  }
  setMain(`<article class="wiki-page"><h1 class="page-title">${esc(name)}</h1>` +
    `${state.page.html}</article><div id="facet-target"></div>`);
}

async function showInbox(): Promise<void> {
  await inbox.refresh();
  setMain(renderInbox(inbox.groups, inbox.collapsed) + '<div id="form-target"></div>');
}

async function showConsole(): Promise<void> {
  await consoleModel.refresh();
  const rows = consoleModel.definitions.map((d) =>
    `<li>${esc(d.name)} v${d.version} ` +
    `<button data-action="start-process" data-name="${esc(d.name)}" ` +
    `data-version="${d.version}">Start</button></li>`).join("");
  setMain(`<h2>Processes</h2><ul class="process-list">${rows}</ul>` +
    '<div id="ticker-target"></div>');
  void pollLoop();
}

async function pollLoop(): Promise<void> {
  if (polling) return;
  polling = true;
  while (location.hash.startsWith("#/console")) {
    try {
      await consoleModel.pollOnce(20);
      const target = document.querySelector("#ticker-target");
      if (target && watchedInstance) {
        target.innerHTML = renderTicker(consoleModel.tickerFor(watchedInstance));
      }
    } catch {
      await new Promise((resolve) => setTimeout(resolve, 2000));
    }
  }
  polling = false;
}

async function refreshBadge(): Promise<void> {
  try {
    const result = await api.notifications();
    $("#badge-target").innerHTML = renderNotificationBadge(result.notifications);
  } catch {
    // not logged in yet
  }
}

async function openForm(taskId: string): Promise<void> {
  const task = inbox.task(taskId);
  if (!task) return;
  activeForm = new TaskFormModel(api, task);
  $("#form-target").innerHTML = renderForm(activeForm);
}

async function submitActiveForm(): Promise<void> {
  if (!activeForm) return;
  const formEl = document.querySelector(".task-form") as HTMLFormElement;
  for (const input of formEl.querySelectorAll("input")) {
    activeForm.setValue(input.name, (input as HTMLInputElement).value);
  }
  const result = await activeForm.submit();
  if (result.ok) {
    const created = result.pagesCreated[0];
    activeForm = null;
    if (created) {
      location.hash = `#/page/${encodeURIComponent(created)}`;
    } else {
      await showInbox();
    }
  } else {
    $("#form-target").innerHTML = renderForm(activeForm);
  }
}

document.addEventListener("click", (event) => {
  const target = (event.target as HTMLElement).closest("[data-action]") as HTMLElement | null;
  if (!target) return;
  const action = target.dataset.action;
  event.preventDefault();
  void (async () => {
    switch (action) {
      case "toggle-group":
        inbox.toggle(target.dataset.group ?? "");
        setMain(renderInbox(inbox.groups, inbox.collapsed) + '<div id="form-target"></div>');
        break;
      case "start-task":
        await inbox.start(target.dataset.task ?? "");
        setMain(renderInbox(inbox.groups, inbox.collapsed) + '<div id="form-target"></div>');
        await openForm(target.dataset.task ?? "");
        break;
      case "open-form":
        await openForm(target.dataset.task ?? "");
        break;
      case "submit-form":
        await submitActiveForm();
        break;
      case "facet-search": {
        const rs = await pageView.facetSearch(target.dataset.iri ?? "",
          (target.dataset.facet ?? "subject") as "subject" | "predicate" | "object");
        $("#facet-target").innerHTML = renderResults(rs);
        break;
      }
      case "start-process": {
        const started = await consoleModel.start(target.dataset.name ?? "",
          Number(target.dataset.version ?? "1"));
        watchedInstance = started.uri;
        break;
      }
      case "create-page":
        await pageView.createEmpty(target.dataset.page ?? "", "= New page =\n");
        await route();
        break;
      case "pick-concept":
        if (pickerTarget) {
          pickerTarget.value = `<${target.dataset.iri}>`;
          $("#picker-target").innerHTML = "";
          pickerTarget = null;
        }
        break;
      default:
        break;
    }
    await refreshBadge();
  })();
});

document.addEventListener("click", (event) => {
  const resource = (event.target as HTMLElement).closest("a.resource") as HTMLElement | null;
  if (!resource || !resource.dataset.iri) return;
  event.preventDefault();
  const target = document.querySelector("#facet-target");
  if (target) target.innerHTML = renderFacetMenu(resource.dataset.iri);
});

document.addEventListener("input", (event) => {
  const input = event.target as HTMLInputElement;
  if (!input.classList?.contains("concept-input")) return;
  pickerTarget = input;
  void picker.loadClasses().then(() => {
    $("#picker-target").innerHTML = renderPickerOptions(picker.suggest(input.value));
  });
});

window.addEventListener("hashchange", () => void route());

window.addEventListener("DOMContentLoaded", () => {
  $("#login-form").addEventListener("submit", (event) => {
    event.preventDefault();
    const user = (document.querySelector("#login-user") as HTMLInputElement).value;
    const password = (document.querySelector("#login-password") as HTMLInputElement).value;
    void api.login(user, password).then(async (session) => {
      $("#session-info").textContent = `signed in as ${session.name}`;
      await refreshBadge();
      await route();
    }).catch((error) => {
      $("#session-info").textContent = String(error);
    });
  });
  void route();
});
