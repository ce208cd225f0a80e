/** Shapes of the JSON the server exposes. */

export interface ProcessRow {
  sid: string;
  name: string;
}

export interface TaskParam {
  name: string;
  value: string;
  writable: boolean;
}

export interface MessageRow {
  mid: string;
  mtype: string;
  from_siid: string;
  to_subject: string;
  to_siid: string;
  received: boolean;
  params: Record<string, string>;
}

export interface Task {
  tid: string;
  kind: "function" | "send" | "receive";
  name: string;
  done: boolean;
  siid: string;
  pid?: string;
  piid?: string;
  process?: string;
  subject?: string;
  transitions?: string[];
  to_subject?: string;
  mtype?: string;
  mtypes?: string[];
  params?: TaskParam[];
  messages?: MessageRow[];
}

export interface TaskLists {
  function: Task[];
  send: Task[];
  receive: Task[];
}

export interface ServerEvent {
  seq: number;
  kind: string;
  pid: string;
  piid: string;
  siid: string | null;
  tid: string | null;
  mid: string | null;
  timestamp: string;
}

export interface StartResult {
  piid: string;
  siid: string;
  task: Task | null;
}

export interface InstanceView {
  siid: string;
  sid: string;
  owner: string | null;
  is_in_end_state: boolean;
  terminated: boolean;
  open_task: Task | null;
}

export interface AuditView {
  piid: string;
  instances: InstanceView[];
  events: ServerEvent[];
}
