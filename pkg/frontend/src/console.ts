/** Process console: deployed definitions, starting instances, live event ticker. */

import type { ApiClient } from "./api.js";
import type { EventJson, ProcessDef } from "./types.js";

export class ProcessConsoleModel {
  definitions: ProcessDef[] = [];
  ticker: EventJson[] = [];
  cursor = 0;

  constructor(private api: ApiClient) {}

  async refresh(): Promise<ProcessDef[]> {
    const result = await this.api.listProcesses();
    this.definitions = result.processes;
    return this.definitions;
  }

  async start(name: string, version: number,
              form: Record<string, string> = {}): Promise<{ id: string; uri: string }> {
    return await this.api.startProcess(name, version, form);
  }

  /** One long-poll cycle; appends new events and advances the cursor. */
  async pollOnce(waitSeconds = 0): Promise<EventJson[]> {
    const result = await this.api.events(this.cursor, waitSeconds);
    for (const event of result.events) {
      this.ticker.push(event);
      this.cursor = Math.max(this.cursor, event.seq);
    }
    return result.events;
  }

  tickerFor(instanceUri: string): EventJson[] {
    return this.ticker.filter((e) => e.instance === instanceUri);
  }

  instanceEnded(instanceUri: string): boolean {
    const events = this.tickerFor(instanceUri);
    return events.length > 0 && events[events.length - 1].kind === "process-end";
  }
}
