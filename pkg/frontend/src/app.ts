/** DOM wiring for the task inbox. All state shown is re-fetched from the
 * server after every action or event; nothing is fabricated client-side. */
import { ApiClient, ApiError } from "./api.js";
import {
  FormError,
  FormInput,
  FormModel,
  buildAnswer,
  buildFormModel,
} from "./forms.js";
import { subscribeEvents, StreamHandle } from "./stream.js";
import type { Task, TaskLists } from "./types.js";

const baseUrl = "";

let client: ApiClient | null = null;
let stream: StreamHandle | null = null;

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  cls?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (cls) node.className = cls;
  if (text !== undefined) node.textContent = text;
  return node;
}

function byId(id: string): HTMLElement {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing #${id}`);
  return node;
}

function setStatus(text: string): void {
  byId("status").textContent = text;
}

function showError(err: unknown): void {
  const box = byId("error");
  box.textContent =
    err instanceof ApiError || err instanceof FormError
      ? err.message
      : String(err);
  box.classList.remove("hidden");
  setTimeout(() => box.classList.add("hidden"), 5000);
}

async function refresh(): Promise<void> {
  if (!client) return;
  try {
    const [processes, tasks] = await Promise.all([
      client.listProcesses(),
      client.listTasks(),
    ]);
    renderProcesses(processes);
    renderTasks(tasks);
  } catch (err) {
    showError(err);
  }
}

function renderProcesses(rows: { sid: string; name: string }[]): void {
  const list = byId("processes");
  list.replaceChildren();
  if (!rows.length) {
    list.append(el("li", "empty", "nothing startable"));
    return;
  }
  for (const row of rows) {
    const item = el("li");
    item.append(el("span", "pname", row.name));
    const button = el("button", "", "Start");
    button.addEventListener("click", async () => {
      try {
        await client!.startProcess(row.sid);
        await refresh();
      } catch (err) {
        showError(err);
      }
    });
    item.append(button);
    list.append(item);
  }
}

function renderTasks(tasks: TaskLists): void {
  const list = byId("tasks");
  list.replaceChildren();
  const all = [...tasks.function, ...tasks.send, ...tasks.receive];
  if (!all.length) {
    list.append(el("li", "empty", "inbox empty"));
    return;
  }
  for (const task of all) {
    list.append(renderTask(task));
  }
}

function renderTask(task: Task): HTMLLIElement {
  const item = el("li", `task ${task.kind}`);
  const head = el("div", "head");
  head.append(el("span", "kind", task.kind));
  head.append(el("span", "tname", task.name));
  head.append(
    el("span", "ctx", `${task.process ?? ""} / ${task.subject ?? ""}`),
  );
  if (task.piid) {
    const piid = task.piid;
    const auditLink = el("button", "link", "audit");
    auditLink.type = "button";
    auditLink.addEventListener("click", () => void showAudit(piid));
    head.append(auditLink);
  }
  item.append(head);
  item.append(renderForm(buildFormModel(task)));
  return item;
}

function renderForm(model: FormModel): HTMLFormElement {
  const form = el("form");
  const inputs = new Map<string, HTMLInputElement>();

  for (const field of model.fields) {
    const row = el("label", "field");
    row.append(el("span", "fname", field.name));
    const input = el("input");
    input.value = field.initial;
    if (field.readonly) {
      // read-only business parameters are displayed but never submitted
      input.readOnly = true;
      input.disabled = true;
      input.classList.add("readonly");
    } else {
      inputs.set(field.name, input);
    }
    row.append(input);
    form.append(row);
  }

  if (model.choice) {
    const group = el("div", "choices");
    for (const label of model.choice.labels) {
      const wrap = el("label", "choice");
      const radio = el("input");
      radio.type = "radio";
      radio.name = `label-${model.tid}`;
      radio.value = label;
      wrap.append(radio, el("span", "", label));
      group.append(wrap);
    }
    form.append(group);
  }

  if (model.messageChoice) {
    const group = el("div", "messages");
    const single = model.messageChoice.messages.length === 1;
    for (const message of model.messageChoice.messages) {
      const wrap = el("label", "choice");
      const radio = el("input");
      radio.type = "radio";
      radio.name = `mid-${model.tid}`;
      radio.value = message.mid;
      if (single) radio.checked = true;
      const text = `${message.mtype} ${JSON.stringify(message.params)}`;
      wrap.append(radio, el("span", "", text));
      group.append(wrap);
    }
    form.append(group);
  }

  const submit = el("button", "submit", model.submitLabel);
  submit.type = "submit";
  form.append(submit);

  form.addEventListener("submit", async (event) => {
    event.preventDefault();
    const input: FormInput = { values: {} };
    for (const [name, node] of inputs) {
      input.values[name] = node.value;
    }
    const picked = form.querySelector<HTMLInputElement>(
      `input[name="label-${model.tid}"]:checked`,
    );
    if (picked) input.label = picked.value;
    const mid = form.querySelector<HTMLInputElement>(
      `input[name="mid-${model.tid}"]:checked`,
    );
    if (mid) input.mid = mid.value;
    try {
      await client!.answerTask(model.tid, buildAnswer(model, input));
      await refresh();
    } catch (err) {
      showError(err);
      await refresh();
    }
  });
  return form;
}

async function showAudit(siidOrPiid: string): Promise<void> {
  if (!client) return;
  const panel = byId("audit");
  try {
    const view = await client.audit(siidOrPiid);
    panel.replaceChildren();
    panel.append(el("h3", "", `instance ${view.piid}`));
    const instances = el("ul");
    for (const inst of view.instances) {
      instances.append(
        el(
          "li",
          "",
          `${inst.sid}: owner=${inst.owner ?? "-"} ` +
            `${inst.is_in_end_state ? "ended" : "running"}` +
            `${inst.terminated ? " terminated" : ""}`,
        ),
      );
    }
    panel.append(instances);
    const events = el("ol");
    for (const event of view.events) {
      events.append(el("li", "", `${event.seq} ${event.kind}`));
    }
    panel.append(events);
    panel.classList.remove("hidden");
  } catch (err) {
    showError(err);
  }
}

function login(username: string): void {
  client = new ApiClient(baseUrl, username, fetch.bind(globalThis));
  stream?.stop();
  setStatus(`connected as ${username} (live)`);
  stream = subscribeEvents(
    baseUrl,
    -1,
    () => void refresh(),
    {
      headers: { "X-User": username },
      onFallback: () => setStatus(`connected as ${username} (polling)`),
    },
  );
  void refresh();
}

export function boot(): void {
  const form = byId("login") as HTMLFormElement;
  form.addEventListener("submit", (event) => {
    event.preventDefault();
    const input = byId("username") as HTMLInputElement;
    if (input.value) login(input.value);
  });
}

if (typeof document !== "undefined" && document.readyState !== "loading") {
  boot();
} else if (typeof document !== "undefined") {
  document.addEventListener("DOMContentLoaded", boot);
}
