import { describe, expect, it, vi } from "vitest";

import { ApiClient, ApiError } from "../src/api.js";

function jsonResponse(body: unknown, status = 200): Response {
  return new Response(JSON.stringify(body), {
    status,
    headers: { "Content-Type": "application/json" },
  });
}

describe("ApiClient", () => {
  it("sends the identity header on every request", async () => {
    const fetchImpl = vi.fn(async () => jsonResponse([]));
    const client = new ApiClient("http://x", "jd",
      fetchImpl as unknown as typeof fetch);
    await client.listProcesses();
    const [url, init] = fetchImpl.mock.calls[0] as unknown as [
      string,
      RequestInit,
    ];
    expect(url).toBe("http://x/api/processes");
    expect((init.headers as Record<string, string>)["X-User"]).toBe("jd");
  });

  it("posts answers as JSON bodies", async () => {
    const fetchImpl = vi.fn(async () => jsonResponse({ ok: true }));
    const client = new ApiClient("", "nr",
      fetchImpl as unknown as typeof fetch);
    await client.answerTask("t1", { label: "approve", params: {} });
    const [url, init] = fetchImpl.mock.calls[0] as unknown as [
      string,
      RequestInit,
    ];
    expect(url).toBe("/api/tasks/t1/answer");
    expect(init.method).toBe("POST");
    expect(JSON.parse(init.body as string)).toEqual({
      label: "approve",
      params: {},
    });
  });

  it("raises ApiError with the server detail on failure", async () => {
    const fetchImpl = vi.fn(async () =>
      jsonResponse({ detail: "task t1 already answered" }, 409),
    );
    const client = new ApiClient("", "nr",
      fetchImpl as unknown as typeof fetch);
    await expect(client.answerTask("t1", {})).rejects.toMatchObject({
      status: 409,
      detail: "task t1 already answered",
    });
    await expect(client.answerTask("t1", {})).rejects.toBeInstanceOf(ApiError);
  });
});
