/** Server payload shapes (see docs/http-api.md on the service side). */

export interface LoginResponse {
  token: string;
  user: string;
  name: string;
  roles: string[];
}

export interface TermJson {
  type: "uri" | "literal";
  value: string;
  page?: string;
  display?: string;
  datatype?: string;
  lang?: string;
}

export interface TaskField {
  name: string;
  type: "literal" | "concept-iri" | "resource-iri";
  predicate: string;
  required: boolean;
}

export interface TaskJson {
  id: string;
  uri: string;
  node: string;
  instance: string;
  state: string;
  assignee: string | null;
  template: string | null;
  fields: TaskField[];
  note: string | null;
  form: Record<string, TermJson>;
}

export interface TaskGroup {
  group: string | null;
  label: string;
  tasks: TaskJson[];
}

export interface PageHtml {
  name: string;
  version: number;
  html: string;
  statements: string[][];
}

export interface PageData {
  name: string;
  uri: string;
  version: number;
  author: string;
  timestamp: string;
  markup: string;
  history: number[];
}

export interface ProcessDef {
  name: string;
  version: number;
  uri: string;
  nodes: string[];
}

export interface InstanceJson {
  id: string;
  uri: string;
  state: string;
  definition: string;
  version: number;
  initiator: string;
}

export interface EventJson {
  seq: number;
  kind: string;
  instance: string;
  subject: string;
  timestamp: string;
}

export interface NotificationJson {
  id: number;
  kind: string;
  subjects: string[];
  created: string;
  read: boolean;
}

export interface ResultSetJson {
  vars: string[];
  rows: Record<string, TermJson>[];
}

export interface CompleteResponse {
  task: TaskJson;
  pagesCreated: string[];
}
