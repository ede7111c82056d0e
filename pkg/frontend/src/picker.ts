/** Concept picker: search-as-you-type over the ontology's class hierarchy.
 *
 * Classes are discovered through the click-search facet on rdfs:subClassOf
 * (every subject or object of a subclass edge is a class), so the picker
 * needs no client-side triple handling.
 */

import type { ApiClient } from "./api.js";

const SUBCLASS_OF = "rdfs:subClassOf";

export interface ConceptOption {
  iri: string;
  display: string;
}

export class ConceptPicker {
  options: ConceptOption[] = [];

  constructor(private api: ApiClient) {}

  async loadClasses(): Promise<ConceptOption[]> {
    const result = await this.api.search(SUBCLASS_OF, "predicate");
    const seen = new Map<string, ConceptOption>();
    for (const row of result.rows) {
      for (const variable of result.vars) {
        const term = row[variable];
        if (term && term.type === "uri") {
          seen.set(term.value, { iri: term.value, display: term.display ?? term.value });
        }
      }
    }
    this.options = [...seen.values()].sort((a, b) => a.display.localeCompare(b.display));
    return this.options;
  }

  suggest(query: string): ConceptOption[] {
    const needle = query.trim().toLowerCase();
    if (!needle) return this.options;
    return this.options.filter(
      (o) => o.display.toLowerCase().includes(needle) || o.iri.toLowerCase().includes(needle),
    );
  }
}
