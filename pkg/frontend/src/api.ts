/**
 * Thin typed client over the evscout service.
 *
 * Every method is one endpoint; no caching, no retries — the service itself
 * is idempotent for evidence runs, so repeating a call is always safe.
 */

import type {
  AnnotationRow,
  AnnotationsImportResponse,
  EvaluateResponse,
  EvidenceRequest,
  EvidenceResponse,
  HealthResponse,
  JobStartResponse,
  JobStatus,
  PatientNotesResponse,
  PatientRow,
  ReportResponse,
  RunRow,
} from "./types";

export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly detail: string,
  ) {
    super(`${status}: ${detail}`);
    this.name = "ApiError";
  }
}

export class ApiClient {
  /**
   * @param baseUrl empty for same-origin (the dev server proxies API paths);
   *                an absolute origin for direct access.
   * @param token   bearer token when the service runs with --auth-token.
   */
  constructor(
    private readonly baseUrl: string = "",
    private readonly token?: string,
  ) {}

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    const headers: Record<string, string> = {};
    if (body !== undefined) headers["content-type"] = "application/json";
    if (this.token) headers["authorization"] = `Bearer ${this.token}`;
    const resp = await fetch(this.baseUrl + path, {
      method,
      headers,
      body: body === undefined ? undefined : JSON.stringify(body),
    });
    if (!resp.ok) {
      let detail = resp.statusText;
      try {
        const parsed = (await resp.json()) as { detail?: unknown };
        if (parsed && parsed.detail !== undefined) detail = String(parsed.detail);
      } catch {
        // non-JSON error body; keep the status text
      }
      throw new ApiError(resp.status, detail);
    }
    return (await resp.json()) as T;
  }

  health(): Promise<HealthResponse> {
    return this.request("GET", "/health");
  }

  patients(): Promise<PatientRow[]> {
    return this.request("GET", "/patients");
  }

  patientNotes(patientId: string): Promise<PatientNotesResponse> {
    return this.request("GET", `/patients/${encodeURIComponent(patientId)}/notes`);
  }

  runEvidence(patientId: string, req: EvidenceRequest): Promise<EvidenceResponse> {
    return this.request("POST", `/patients/${encodeURIComponent(patientId)}/evidence`, req);
  }

  runs(): Promise<RunRow[]> {
    return this.request("GET", "/runs");
  }

  evaluateRun(runId: string, strict = false): Promise<EvaluateResponse> {
    return this.request("POST", `/runs/${encodeURIComponent(runId)}/evaluate`, { strict });
  }

  report(evaluationRunId: string): Promise<ReportResponse> {
    return this.request("GET", `/reports/${encodeURIComponent(evaluationRunId)}`);
  }

  importAnnotations(rows: AnnotationRow[]): Promise<AnnotationsImportResponse> {
    return this.request("POST", "/annotations", { rows });
  }

  listAnnotations(): Promise<{ rows: AnnotationRow[] }> {
    return this.request("GET", "/annotations");
  }

  startJob(body: {
    patient_id: string;
    condition: string;
    mode?: string;
    style?: string;
    abstain_threshold?: number;
  }): Promise<JobStartResponse> {
    return this.request("POST", "/jobs", body);
  }

  jobStatus(jobId: string): Promise<JobStatus> {
    return this.request("GET", `/jobs/${encodeURIComponent(jobId)}`);
  }
}
