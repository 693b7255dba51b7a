/**
 * Typed client for the labeling service. Every call maps 1:1 onto a
 * documented endpoint; the UI has no other server surface.
 */

export interface QueueItem {
  crop_id: string;
  image: string;
  batch_id: number;
}

export interface CurvePoint {
  labels: number;
  accuracy: number;
  wall_time_s: number;
}

export interface Progress {
  labels_acquired: number;
  step: number;
  budget: number;
  state: 'awaiting_labels' | 'training' | 'done';
  curve: CurvePoint[];
}

export interface LabelSubmission {
  crop_id: string;
  label: string;
  batch_id: number;
  submitter?: string;
}

export interface SubmitResult {
  accepted: number;
  errors: { crop_id: string; error: string }[];
  status: string;
}

/** Thrown on a conflicting resubmission (HTTP 409). */
export class ConflictError extends Error {
  constructor(detail: string) {
    super(detail);
    this.name = 'ConflictError';
  }
}

export class ApiError extends Error {
  constructor(
    readonly status: number,
    detail: string,
  ) {
    super(detail);
    this.name = 'ApiError';
  }
}

async function parseError(resp: Response): Promise<never> {
  let detail = `${resp.status} ${resp.statusText}`;
  try {
    const body = (await resp.json()) as { detail?: string };
    if (body.detail) detail = body.detail;
  } catch {
    // non-JSON error body; keep the status line
  }
  if (resp.status === 409) throw new ConflictError(detail);
  throw new ApiError(resp.status, detail);
}

export class ApiClient {
  constructor(private readonly baseUrl: string) {}

  private async getJson<T>(path: string): Promise<T> {
    const resp = await fetch(`${this.baseUrl}${path}`);
    if (!resp.ok) await parseError(resp);
    return (await resp.json()) as T;
  }

  async getQueue(sessionId: string): Promise<QueueItem[]> {
    const body = await this.getJson<{ items: QueueItem[] }>(`/sessions/${sessionId}/queue`);
    return body.items;
  }

  async getProgress(sessionId: string): Promise<Progress> {
    return this.getJson<Progress>(`/sessions/${sessionId}/progress`);
  }

  async getClasses(sessionId: string): Promise<string[]> {
    const body = await this.getJson<{ classes: string[] }>(`/sessions/${sessionId}/classes`);
    return body.classes;
  }

  async getCurveCsv(sessionId: string): Promise<string> {
    const resp = await fetch(`${this.baseUrl}/sessions/${sessionId}/curve.csv`);
    if (!resp.ok) await parseError(resp);
    return resp.text();
  }

  async submitLabels(sessionId: string, labels: LabelSubmission[]): Promise<SubmitResult> {
    const resp = await fetch(`${this.baseUrl}/sessions/${sessionId}/labels`, {
      method: 'POST',
      headers: { 'Content-Type': 'application/json' },
      body: JSON.stringify({ labels }),
    });
    if (!resp.ok) await parseError(resp);
    return (await resp.json()) as SubmitResult;
  }

  cropUrl(item: QueueItem): string {
    return `${this.baseUrl}${item.image}`;
  }
}
