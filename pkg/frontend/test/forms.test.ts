import { describe, expect, it } from "vitest";

import { FormError, buildAnswer, buildFormModel } from "../src/forms.js";
import type { MessageRow, Task } from "../src/types.js";

const functionTask: Task = {
  tid: "t1",
  kind: "function",
  name: "review order",
  done: false,
  siid: "i1",
  transitions: ["approve", "deny"],
  params: [
    { name: "product", value: "laptop", writable: false },
    { name: "quantity", value: "3", writable: false },
    { name: "decision", value: "", writable: true },
  ],
};

function message(mid: string, mtype = "Order"): MessageRow {
  return {
    mid,
    mtype,
    from_siid: "i0",
    to_subject: "Supervisor",
    to_siid: "i1",
    received: false,
    params: { product: "laptop" },
  };
}

describe("buildFormModel", () => {
  it("renders transitions as a required radio choice", () => {
    const model = buildFormModel(functionTask);
    expect(model.choice).toEqual({
      labels: ["approve", "deny"],
      required: true,
    });
  });

  it("marks read-only params read-only and writable params editable", () => {
    const model = buildFormModel(functionTask);
    expect(model.fields).toEqual([
      { name: "product", initial: "laptop", readonly: true },
      { name: "quantity", initial: "3", readonly: true },
      { name: "decision", initial: "", readonly: false },
    ]);
  });

  it("forces message selection only when more than one candidate", () => {
    const one = buildFormModel({
      tid: "r1",
      kind: "receive",
      name: "receive order",
      done: false,
      siid: "i1",
      mtypes: ["Order"],
      messages: [message("m1")],
    });
    expect(one.messageChoice?.required).toBe(false);
    const two = buildFormModel({
      tid: "r2",
      kind: "receive",
      name: "receive order",
      done: false,
      siid: "i1",
      mtypes: ["Order"],
      messages: [message("m1"), message("m2")],
    });
    expect(two.messageChoice?.required).toBe(true);
  });
});

describe("buildAnswer", () => {
  it("builds a function answer with label and writable params only", () => {
    const model = buildFormModel(functionTask);
    const body = buildAnswer(model, {
      values: { decision: "yes" },
      label: "approve",
    });
    expect(body).toEqual({ label: "approve", params: { decision: "yes" } });
  });

  it("cannot submit read-only fields", () => {
    const model = buildFormModel(functionTask);
    expect(() =>
      buildAnswer(model, {
        values: { product: "tampered", decision: "yes" },
        label: "approve",
      }),
    ).toThrow(FormError);
  });

  it("requires a transition choice", () => {
    const model = buildFormModel(functionTask);
    expect(() => buildAnswer(model, { values: {} })).toThrow(FormError);
    expect(() =>
      buildAnswer(model, { values: {}, label: "teleport" }),
    ).toThrow(FormError);
  });

  it("send answers carry the writable params", () => {
    const model = buildFormModel({
      tid: "s1",
      kind: "send",
      name: "send order",
      done: false,
      siid: "i1",
      to_subject: "Supervisor",
      mtype: "Order",
      params: [{ name: "note", value: "", writable: true }],
    });
    expect(buildAnswer(model, { values: { note: "hi" } })).toEqual({
      params: { note: "hi" },
    });
  });

  it("receive with two candidates rejects an unselected submit", () => {
    const model = buildFormModel({
      tid: "r2",
      kind: "receive",
      name: "receive order",
      done: false,
      siid: "i1",
      mtypes: ["Order"],
      messages: [message("m1"), message("m2")],
    });
    expect(() => buildAnswer(model, { values: {} })).toThrow(FormError);
    expect(buildAnswer(model, { values: {}, mid: "m2" })).toEqual({
      mid: "m2",
    });
    expect(() =>
      buildAnswer(model, { values: {}, mid: "ghost" }),
    ).toThrow(FormError);
  });

  it("receive with a single candidate may submit without selection", () => {
    const model = buildFormModel({
      tid: "r1",
      kind: "receive",
      name: "receive order",
      done: false,
      siid: "i1",
      mtypes: ["Order"],
      messages: [message("m1")],
    });
    expect(buildAnswer(model, { values: {} })).toEqual({});
  });
});
