/** Pure HTML builders for every view; app.ts injects them into the DOM. */

import type { TaskFormModel } from "./taskform.js";
import type { ConceptOption } from "./picker.js";
import type { EventJson, NotificationJson, ResultSetJson, TaskGroup, TaskJson } from "./types.js";

export function esc(text: string): string {
  return text
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;");
}

export function renderInbox(groups: TaskGroup[], collapsed: Set<string>): string {
  if (groups.length === 0) {
    return '<div class="empty-state">No open tasks. Enjoy the field work.</div>';
  }
  const parts: string[] = ['<div class="inbox">'];
  for (const group of groups) {
    const isCollapsed = collapsed.has(group.label);
    parts.push(
      `<div class="task-group" data-group="${esc(group.label)}">`,
      `<h2 class="group-header" data-action="toggle-group" data-group="${esc(group.label)}">` +
        `${isCollapsed ? "&#9656;" : "&#9662;"} ${esc(group.label)} (${group.tasks.length})</h2>`,
    );
    if (!isCollapsed) {
      parts.push("<ul>");
      for (const task of group.tasks) {
        parts.push(renderTaskRow(task));
      }
      parts.push("</ul>");
    }
    parts.push("</div>");
  }
  parts.push("</div>");
  return parts.join("");
}

function renderTaskRow(task: TaskJson): string {
  const button = task.state === "assigned"
    ? `<button data-action="start-task" data-task="${esc(task.id)}">Start</button>`
    : `<button data-action="open-form" data-task="${esc(task.id)}">Open form</button>`;
  return `<li class="task" data-task="${esc(task.id)}">` +
    `<span class="task-node">${esc(task.node)}</span> ` +
    `<span class="task-state">${esc(task.state)}</span> ${button}</li>`;
}

export function renderForm(form: TaskFormModel): string {
  const parts: string[] = [
    `<form class="task-form" data-task="${esc(form.task.id)}">`,
    `<h2>${esc(form.task.node)}</h2>`,
  ];
  if (form.formError) {
    parts.push(`<div class="form-error">${esc(form.formError)}</div>`);
  }
  for (const field of form.task.fields) {
    const value = form.values[field.name] ?? "";
    const error = form.fieldErrors[field.name];
    parts.push(`<label data-field="${esc(field.name)}">${esc(field.name)}` +
      (field.required ? ' <span class="required">*</span>' : ""));
    if (field.type === "literal") {
      parts.push(`<input type="text" name="${esc(field.name)}" value="${esc(value)}"/>`);
    } else {
      parts.push(
        `<input type="text" name="${esc(field.name)}" value="${esc(value)}"` +
          ` class="concept-input" data-picker="${esc(field.type)}"/>` +
          `<span class="picker-hint">pick a concept</span>`,
      );
    }
    if (error) {
      parts.push(`<span class="field-error" data-field="${esc(field.name)}">${esc(error)}</span>`);
    }
    parts.push("</label>");
  }
  parts.push('<button type="submit" data-action="submit-form">Complete task</button>');
  parts.push("</form>");
  return parts.join("");
}

export function renderPickerOptions(options: ConceptOption[]): string {
  return '<ul class="picker-options">' +
    options.map((o) =>
      `<li data-action="pick-concept" data-iri="${esc(o.iri)}">${esc(o.display)}</li>`).join("") +
    "</ul>";
}

export function renderFacetMenu(iri: string): string {
  const facets = ["subject", "predicate", "object"] as const;
  return `<div class="facet-menu" data-iri="${esc(iri)}">` +
    facets.map((f) =>
      `<button data-action="facet-search" data-facet="${f}" data-iri="${esc(iri)}">` +
      `as ${f}</button>`).join("") +
    "</div>";
}

export function renderResults(rs: ResultSetJson): string {
  const parts: string[] = ['<table class="results"><tr>'];
  for (const v of rs.vars) parts.push(`<th>${esc(v)}</th>`);
  parts.push("</tr>");
  for (const row of rs.rows) {
    parts.push("<tr>");
    for (const v of rs.vars) {
      const term = row[v];
      if (!term) {
        parts.push("<td></td>");
      } else if (term.type === "uri" && term.page) {
        parts.push(`<td><a href="#/page/${encodeURIComponent(term.page)}">` +
          `${esc(term.page)}</a></td>`);
      } else if (term.type === "uri") {
        parts.push(`<td><a href="#" class="resource" data-iri="${esc(term.value)}">` +
          `${esc(term.display ?? term.value)}</a></td>`);
      } else {
        parts.push(`<td>${esc(term.value)}</td>`);
      }
    }
    parts.push("</tr>");
  }
  parts.push("</table>");
  return parts.join("");
}

export function renderNotFound(name: string): string {
  return `<div class="not-found">There is no page named <b>${esc(name)}</b> yet. ` +
    `<button data-action="create-page" data-page="${esc(name)}">Create it</button></div>`;
}

export function renderTicker(events: EventJson[]): string {
  return '<ol class="ticker">' +
    events.map((e) =>
      `<li data-seq="${e.seq}"><code>${esc(e.kind)}</code> ${esc(e.subject)}</li>`).join("") +
    "</ol>";
}

export function renderNotificationBadge(notifications: NotificationJson[]): string {
  const unread = notifications.filter((n) => !n.read).length;
  return unread > 0 ? `<span class="badge">${unread}</span>` : "";
}
