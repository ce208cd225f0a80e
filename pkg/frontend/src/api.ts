/** Thin typed client for the server's JSON API. */
import type {
  AuditView,
  ProcessRow,
  StartResult,
  Task,
  TaskLists,
} from "./types.js";

export class ApiError extends Error {
  constructor(
    public status: number,
    public detail: string,
  ) {
    super(`${status}: ${detail}`);
  }
}

export class ApiClient {
  constructor(
    private baseUrl: string,
    public username: string,
    private fetchImpl: typeof fetch = fetch,
  ) {}

  headers(): Record<string, string> {
    return { "X-User": this.username, "Content-Type": "application/json" };
  }

  private async request<T>(
    method: string,
    path: string,
    body?: unknown,
  ): Promise<T> {
    const response = await this.fetchImpl(this.baseUrl + path, {
      method,
      headers: this.headers(),
      body: body === undefined ? undefined : JSON.stringify(body),
    });
    if (!response.ok) {
      let detail = response.statusText;
      try {
        const parsed = await response.json();
        detail =
          typeof parsed.detail === "string"
            ? parsed.detail
            : JSON.stringify(parsed.detail ?? parsed);
      } catch {
        // non-JSON error body; keep the status text
      }
      throw new ApiError(response.status, detail);
    }
    return (await response.json()) as T;
  }

  listProcesses(): Promise<ProcessRow[]> {
    return this.request("GET", "/api/processes");
  }

  startProcess(sid: string): Promise<StartResult> {
    return this.request("POST", `/api/processes/${sid}/start`);
  }

  listTasks(): Promise<TaskLists> {
    return this.request("GET", "/api/tasks");
  }

  taskDetail(tid: string): Promise<Task> {
    return this.request("GET", `/api/tasks/${tid}`);
  }

  answerTask(tid: string, body: Record<string, unknown>): Promise<unknown> {
    return this.request("POST", `/api/tasks/${tid}/answer`, body);
  }

  audit(piid: string): Promise<AuditView> {
    return this.request("GET", `/api/admin/instances/${piid}`);
  }
}
