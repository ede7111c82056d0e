/** Task form state: field values and server-mirrored validation.
 *
 * No validation logic lives here on purpose: the form submits what the user
 * entered and maps the server's 422 field list onto inline errors.
 */

import { ApiClient, ApiError } from "./api.js";
import type { TaskJson } from "./types.js";

export type SubmitResult =
  | { ok: true; pagesCreated: string[]; task: TaskJson }
  | { ok: false; status: number; message: string };

export class TaskFormModel {
  values: Record<string, string> = {};
  fieldErrors: Record<string, string> = {};
  formError: string | null = null;

  constructor(private api: ApiClient, public task: TaskJson) {
    for (const [name, term] of Object.entries(task.form)) {
      this.values[name] = term.value;
    }
  }

  setValue(name: string, value: string): void {
    this.values[name] = value;
    delete this.fieldErrors[name];
  }

  async submit(): Promise<SubmitResult> {
    this.fieldErrors = {};
    this.formError = null;
    try {
      const result = await this.api.completeTask(this.task.id, this.values);
      return { ok: true, pagesCreated: result.pagesCreated, task: result.task };
    } catch (error) {
      if (error instanceof ApiError) {
        if (error.status === 422 && error.body.error === "form-validation") {
          for (const field of error.body.fields ?? []) {
            const spec = this.task.fields.find((f) => f.name === field);
            this.fieldErrors[field] = spec && spec.type !== "literal"
              ? "must be a concept/resource IRI"
              : "required";
        }
        } else {
          this.formError = error.body.detail ?? error.body.error ?? `HTTP ${error.status}`;
        }
        return { ok: false, status: error.status, message: error.message };
      }
      throw error;
    }
  }
}
