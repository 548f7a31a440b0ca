import { describe, expect, it, vi } from "vitest";

import { DebouncedValidator, ServiceClient } from "../src/client.js";

function fakeFetch(handler: (url: string, init?: RequestInit) => { status: number; body: unknown }) {
  return (async (url: any, init?: any) => {
    const { status, body } = handler(String(url), init);
    return {
      status,
      json: async () => body,
    } as Response;
  }) as typeof fetch;
}

describe("ServiceClient", () => {
  it("posts documents and unwraps the report envelope", async () => {
    const client = new ServiceClient(
      "http://svc",
      fakeFetch((url, init) => {
        expect(url).toBe("http://svc/api/validate");
        const sent = JSON.parse(String(init?.body));
        expect(sent.documents["project.json"]).toBeDefined();
        return {
          status: 200,
          body: { request_id: "r", payload: { report: { pass: true, diagnostics: [], shapes: {} } } },
        };
      }),
    );
    const result = await client.validate({ "project.json": {} });
    expect(result.status).toBe(200);
    expect(result.report?.pass).toBe(true);
  });

  it("returns null revision on stale puts", async () => {
    const client = new ServiceClient(
      "http://svc",
      fakeFetch(() => ({ status: 409, body: { request_id: "r", error: { code: "STALE_REVISION", message: "" } } })),
    );
    expect(await client.putProject("p", "old", {})).toBeNull();
  });
});

describe("DebouncedValidator", () => {
  it("coalesces bursts into one request after the delay", async () => {
    vi.useFakeTimers();
    let calls = 0;
    const client = new ServiceClient(
      "http://svc",
      fakeFetch(() => {
        calls += 1;
        return { status: 200, body: { request_id: "r", payload: { report: { pass: true, diagnostics: [], shapes: {} } } } };
      }),
    );
    const reports: boolean[] = [];
    const validator = new DebouncedValidator(client, (r) => reports.push(r.report!.pass), 300);
    validator.request({ a: 1 });
    validator.request({ a: 2 });
    validator.request({ a: 3 });
    await vi.advanceTimersByTimeAsync(299);
    expect(calls).toBe(0);
    await vi.advanceTimersByTimeAsync(2);
    await vi.runAllTimersAsync();
    expect(calls).toBe(1);
    expect(reports).toEqual([true]);
    vi.useRealTimers();
  });

  it("discards stale responses when a newer request resolves first", async () => {
    const resolvers: ((value: { status: number; json: () => Promise<unknown> }) => void)[] = [];
    const pendingFetch = (async () =>
      new Promise((resolve) => {
        resolvers.push(resolve as any);
      })) as unknown as typeof fetch;
    const client = new ServiceClient("http://svc", pendingFetch);
    const delivered: string[] = [];
    const validator = new DebouncedValidator(
      client,
      (r) => delivered.push(r.report ? "report" : "none"),
      0,
    );
    validator.request({ v: 1 });
    await new Promise((resolve) => setTimeout(resolve, 5));
    validator.request({ v: 2 });
    await new Promise((resolve) => setTimeout(resolve, 5));
    expect(resolvers).toHaveLength(2);
    // newest (second) answers first...
    resolvers[1]({
      status: 200,
      json: async () => ({ request_id: "b", payload: { report: { pass: true, diagnostics: [], shapes: {} } } }),
    });
    await new Promise((resolve) => setTimeout(resolve, 5));
    // ...then the stale first response lands and must be dropped
    resolvers[0]({
      status: 200,
      json: async () => ({ request_id: "a", payload: { report: { pass: false, diagnostics: [], shapes: {} } } }),
    });
    await new Promise((resolve) => setTimeout(resolve, 5));
    expect(delivered).toEqual(["report"]);
  });
});
