/** Task inbox state: server-provided groups, collapse toggles, refresh. */

import type { ApiClient } from "./api.js";
import type { TaskGroup, TaskJson } from "./types.js";

export class InboxModel {
  groups: TaskGroup[] = [];
  collapsed = new Set<string>();

  constructor(private api: ApiClient) {}

  async refresh(): Promise<TaskGroup[]> {
    const result = await this.api.myTasks();
    this.groups = result.groups;
    return this.groups;
  }

  toggle(label: string): void {
    if (this.collapsed.has(label)) {
      this.collapsed.delete(label);
    } else {
      this.collapsed.add(label);
    }
  }

  isCollapsed(label: string): boolean {
    return this.collapsed.has(label);
  }

  taskCount(): number {
    return this.groups.reduce((n, g) => n + g.tasks.length, 0);
  }

  task(id: string): TaskJson | undefined {
    for (const group of this.groups) {
      const found = group.tasks.find((t) => t.id === id);
      if (found) return found;
    }
    return undefined;
  }

  async start(id: string): Promise<TaskJson> {
    const task = await this.api.startTask(id);
    await this.refresh();
    return task;
  }
}
