/** Typed client for the service API; the only place the UI touches the network. */

import type {
  CompleteResponse,
  EventJson,
  InstanceJson,
  LoginResponse,
  NotificationJson,
  PageData,
  PageHtml,
  ProcessDef,
  ResultSetJson,
  TaskGroup,
  TaskJson,
} from "./types.js";

export interface ErrorBody {
  error?: string;
  fields?: string[];
  detail?: string;
}

export class ApiError extends Error {
  constructor(public status: number, public body: ErrorBody) {
    super(body.detail ?? body.error ?? `HTTP ${status}`);
  }
}

type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class ApiClient {
  token: string | null = null;

  constructor(
    private baseUrl: string = "",
    private fetchFn: FetchLike = (input, init) => globalThis.fetch(input, init),
  ) {}

  private async request(method: string, path: string, body?: unknown,
                        rawBody?: string, headers?: Record<string, string>): Promise<Response> {
    const allHeaders: Record<string, string> = { ...(headers ?? {}) };
    if (this.token) allHeaders["Authorization"] = `Bearer ${this.token}`;
    let payload: string | undefined;
    if (rawBody !== undefined) {
      payload = rawBody;
      allHeaders["Content-Type"] = allHeaders["Content-Type"] ?? "text/plain";
    } else if (body !== undefined) {
      payload = JSON.stringify(body);
      allHeaders["Content-Type"] = "application/json";
    }
    const response = await this.fetchFn(this.baseUrl + path, {
      method,
      headers: allHeaders,
      body: payload,
    });
    if (!response.ok) {
      let parsed: ErrorBody = {};
      try {
        parsed = (await response.json()) as ErrorBody;
      } catch {
        parsed = { detail: response.statusText };
      }
      throw new ApiError(response.status, parsed);
    }
    return response;
  }

  private async json<T>(method: string, path: string, body?: unknown): Promise<T> {
    const response = await this.request(method, path, body);
    return (await response.json()) as T;
  }

  async login(user: string, password: string): Promise<LoginResponse> {
    const result = await this.json<LoginResponse>("POST", "/login", { user, password });
    this.token = result.token;
    return result;
  }

  listPages(): Promise<{ pages: string[] }> {
    return this.json("GET", "/pages");
  }

  getPage(name: string): Promise<PageData> {
    return this.json("GET", `/pages/${encodeURIComponent(name)}`);
  }

  getPageHtml(name: string): Promise<PageHtml> {
    return this.json("GET", `/pages/${encodeURIComponent(name)}/html`);
  }

  async putPage(name: string, markup: string, baseVersion?: number): Promise<{ version: number }> {
    const headers: Record<string, string> = {};
    if (baseVersion !== undefined) headers["X-Base-Version"] = String(baseVersion);
    const response = await this.request("PUT", `/pages/${encodeURIComponent(name)}`,
                                        undefined, markup, headers);
    return (await response.json()) as { version: number };
  }

  listProcesses(): Promise<{ processes: ProcessDef[] }> {
    return this.json("GET", "/processes");
  }

  listInstances(): Promise<{ instances: InstanceJson[] }> {
    return this.json("GET", "/instances");
  }

  startProcess(name: string, version: number,
               form: Record<string, string>): Promise<{ id: string; uri: string; state: string }> {
    return this.json("POST", `/processes/${encodeURIComponent(name)}/${version}/start`, { form });
  }

  myTasks(): Promise<{ groups: TaskGroup[] }> {
    return this.json("GET", "/tasks?user=me");
  }

  startTask(id: string): Promise<TaskJson> {
    return this.json("POST", `/tasks/${encodeURIComponent(id)}/start`, {});
  }

  completeTask(id: string, form: Record<string, string>): Promise<CompleteResponse> {
    return this.json("POST", `/tasks/${encodeURIComponent(id)}/complete`, { form });
  }

  search(resource: string, facet: "subject" | "predicate" | "object"): Promise<ResultSetJson> {
    const params = new URLSearchParams({ resource, facet });
    return this.json("GET", `/search?${params}`);
  }

  cannedSearch(name: string, arg: string): Promise<ResultSetJson> {
    const params = new URLSearchParams({ canned: name, arg });
    return this.json("GET", `/search?${params}`);
  }

  async query(text: string): Promise<string> {
    const response = await this.request("POST", "/query", undefined, text);
    return await response.text();
  }

  notifications(): Promise<{ notifications: NotificationJson[] }> {
    return this.json("GET", "/notifications");
  }

  events(after: number, wait: number = 0): Promise<{ events: EventJson[] }> {
    return this.json("GET", `/events?after=${after}&wait=${wait}`);
  }
}
