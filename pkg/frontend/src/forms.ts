/** Pure form logic: derive a form model from task metadata and build the
 * answer payload from what the user entered. Read-only fields never make it
 * into a submission, and the model simply offers no input for them. */
import type { MessageRow, Task } from "./types.js";

export interface FieldModel {
  name: string;
  initial: string;
  readonly: boolean;
}

export interface ChoiceModel {
  /** Radio group of transition labels; exactly one must be picked. */
  labels: string[];
  required: true;
}

export interface MessageChoiceModel {
  /** Candidate messages; selection is forced when there is more than one. */
  messages: MessageRow[];
  required: boolean;
}

export interface FormModel {
  kind: Task["kind"];
  tid: string;
  title: string;
  fields: FieldModel[];
  choice: ChoiceModel | null;
  messageChoice: MessageChoiceModel | null;
  submitLabel: string;
}

export function buildFormModel(task: Task): FormModel {
  const fields: FieldModel[] = (task.params ?? []).map((p) => ({
    name: p.name,
    initial: p.value,
    readonly: !p.writable,
  }));
  if (task.kind === "function") {
    return {
      kind: "function",
      tid: task.tid,
      title: task.name,
      fields,
      choice: { labels: task.transitions ?? [], required: true },
      messageChoice: null,
      submitLabel: "Submit",
    };
  }
  if (task.kind === "send") {
    return {
      kind: "send",
      tid: task.tid,
      title: `${task.name} → ${task.to_subject ?? ""} (${task.mtype ?? ""})`,
      fields,
      choice: null,
      messageChoice: null,
      submitLabel: "Send",
    };
  }
  const messages = task.messages ?? [];
  return {
    kind: "receive",
    tid: task.tid,
    title: task.name,
    fields: [],
    choice: null,
    messageChoice: { messages, required: messages.length > 1 },
    submitLabel: "Receive",
  };
}

export interface FormInput {
  /** Values the user typed, keyed by field name (writable fields only). */
  values: Record<string, string>;
  /** Transition label picked in the radio group, if any. */
  label?: string;
  /** Message id picked for a receive task, if any. */
  mid?: string;
}

export class FormError extends Error {}

/** Build the JSON answer body; throws FormError when the input is
 * incomplete or tries to submit a value the form never offered. */
export function buildAnswer(model: FormModel, input: FormInput): Record<string, unknown> {
  const writable = new Set(
    model.fields.filter((f) => !f.readonly).map((f) => f.name),
  );
  for (const name of Object.keys(input.values)) {
    if (!writable.has(name)) {
      throw new FormError(`field ${name} is not writable`);
    }
  }
  if (model.kind === "function") {
    if (!input.label || !model.choice?.labels.includes(input.label)) {
      throw new FormError("pick one transition");
    }
    return { label: input.label, params: input.values };
  }
  if (model.kind === "send") {
    return { params: input.values };
  }
  const mc = model.messageChoice!;
  if (mc.required && !input.mid) {
    throw new FormError("select which message to receive");
  }
  if (input.mid && !mc.messages.some((m) => m.mid === input.mid)) {
    throw new FormError("unknown message selected");
  }
  return input.mid ? { mid: input.mid } : {};
}
