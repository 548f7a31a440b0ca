/** Typed client for the compiler service plus the debounced validator. */

import {
  DocumentSet,
  Envelope,
  GeneratedFileDoc,
  ReportDoc,
} from "./documents.js";

export interface ValidateResult {
  status: number;
  report: ReportDoc | null;
  error?: { code: string; message: string };
}

export interface GenerateResult {
  status: number;
  files: GeneratedFileDoc[];
  report: ReportDoc | null;
  error?: { code: string; message: string };
}

export interface ProjectFetch {
  revision: string;
  documents: DocumentSet;
}

export class ServiceClient {
  constructor(readonly baseUrl: string, private readonly fetcher: typeof fetch = fetch) {}

  private async post(path: string, body: unknown): Promise<{ status: number; envelope: Envelope<any> }> {
    const response = await this.fetcher(`${this.baseUrl}${path}`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(body),
    });
    return { status: response.status, envelope: await response.json() };
  }

  async validate(documents: DocumentSet): Promise<ValidateResult> {
    const { status, envelope } = await this.post("/api/validate", { documents });
    return {
      status,
      report: envelope.payload?.report ?? null,
      error: envelope.error,
    };
  }

  async generate(documents: DocumentSet, force = false): Promise<GenerateResult> {
    const { status, envelope } = await this.post(
      `/api/generate?force=${force}`,
      { documents },
    );
    return {
      status,
      files: envelope.payload?.files ?? [],
      report: envelope.payload?.report ?? null,
      error: envelope.error,
    };
  }

  async listProjects(): Promise<string[]> {
    const response = await this.fetcher(`${this.baseUrl}/api/projects`);
    const envelope: Envelope<{ projects: string[] }> = await response.json();
    return envelope.payload?.projects ?? [];
  }

  async getProject(id: string): Promise<ProjectFetch | null> {
    const response = await this.fetcher(`${this.baseUrl}/api/projects/${id}`);
    if (response.status === 404) return null;
    const envelope: Envelope<ProjectFetch> = await response.json();
    return envelope.payload ?? null;
  }

  /** Optimistic put; returns the new revision or null when stale (409). */
  async putProject(
    id: string,
    revision: string | null,
    documents: DocumentSet,
  ): Promise<string | null> {
    const response = await this.fetcher(`${this.baseUrl}/api/projects/${id}`, {
      method: "PUT",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ revision, documents }),
    });
    if (response.status !== 200) return null;
    const envelope: Envelope<{ revision: string }> = await response.json();
    return envelope.payload?.revision ?? null;
  }

  async registryPackages(): Promise<{ name: string; versions: string[] }[]> {
    const response = await this.fetcher(`${this.baseUrl}/api/registry/packages`);
    const envelope: Envelope<{ packages: { name: string; versions: string[] }[] }> =
      await response.json();
    return envelope.payload?.packages ?? [];
  }

  async registryPackage(
    name: string,
    version: string,
  ): Promise<{ manifest: Record<string, unknown>; documents: DocumentSet } | null> {
    const response = await this.fetcher(
      `${this.baseUrl}/api/registry/packages/${name}/${version}`,
    );
    if (response.status !== 200) return null;
    const envelope: Envelope<{ manifest: Record<string, unknown>; documents: DocumentSet }> =
      await response.json();
    return envelope.payload ?? null;
  }
}

/** Debounced validation with stale-response discard.
 *
 * Edits arrive faster than round trips; only the report for the newest
 * request sequence number is delivered, and requests are coalesced within
 * the debounce window (~300 ms by default).
 */
export class DebouncedValidator {
  private timer: ReturnType<typeof setTimeout> | null = null;
  private sequence = 0;
  private delivered = 0;

  constructor(
    private readonly client: ServiceClient,
    private readonly onReport: (result: ValidateResult) => void,
    readonly delayMs = 300,
  ) {}

  request(documents: DocumentSet): void {
    if (this.timer !== null) clearTimeout(this.timer);
    const sequence = ++this.sequence;
    this.timer = setTimeout(() => {
      this.timer = null;
      void this.client.validate(documents).then((result) => {
        if (sequence <= this.delivered) return; // stale: a newer reply landed
        if (sequence !== this.sequence) return; // stale: newer request pending
        this.delivered = sequence;
        this.onReport(result);
      });
    }, this.delayMs);
  }

  /** Bypass the debounce window (used on explicit "validate now"). */
  async flush(documents: DocumentSet): Promise<ValidateResult> {
    if (this.timer !== null) {
      clearTimeout(this.timer);
      this.timer = null;
    }
    const sequence = ++this.sequence;
    const result = await this.client.validate(documents);
    if (sequence > this.delivered) {
      this.delivered = sequence;
      this.onReport(result);
    }
    return result;
  }
}
