/** Wiki page view state: server-rendered HTML plus click-search affordances. */

import { ApiClient, ApiError } from "./api.js";
import type { PageHtml, ResultSetJson } from "./types.js";

export type PageState =
  | { kind: "page"; page: PageHtml }
  | { kind: "not-found"; name: string };

const DATA_IRI_RE = /data-iri="([^"]+)"/g;
const DATA_PAGE_RE = /data-page="([^"]+)"/g;

export class PageViewModel {
  state: PageState | null = null;

  constructor(private api: ApiClient) {}

  async load(name: string): Promise<PageState> {
    try {
      const page = await this.api.getPageHtml(name);
      this.state = { kind: "page", page };
    } catch (error) {
      if (error instanceof ApiError && error.status === 404) {
        this.state = { kind: "not-found", name };
      } else {
        throw error;
      }
    }
    return this.state;
  }

  /** Every resource IRI in the rendering, for wiring facet menus. */
  resources(): string[] {
    if (!this.state || this.state.kind !== "page") return [];
    const found = new Set<string>();
    for (const match of this.state.page.html.matchAll(DATA_IRI_RE)) {
      found.add(decodeEntities(match[1]));
    }
    return [...found];
  }

  /** Linked page names in the rendering (typed and plain wiki links). */
  linkedPages(): string[] {
    if (!this.state || this.state.kind !== "page") return [];
    const found = new Set<string>();
    for (const match of this.state.page.html.matchAll(DATA_PAGE_RE)) {
      found.add(decodeEntities(match[1]));
    }
    return [...found];
  }

  facetSearch(iri: string, facet: "subject" | "predicate" | "object"): Promise<ResultSetJson> {
    return this.api.search(iri, facet);
  }

  async createEmpty(name: string, markup: string): Promise<void> {
    await this.api.putPage(name, markup);
    await this.load(name);
  }
}

function decodeEntities(text: string): string {
  return text
    .replace(/&lt;/g, "<")
    .replace(/&gt;/g, ">")
    .replace(/&quot;/g, '"')
    .replace(/&#x27;/g, "'")
    .replace(/&amp;/g, "&");
}
