/**
 * The labeling state machine behind the page. It keeps only the current
 * view; the server stays the source of truth, so a reload reconstructs
 * everything from the documented endpoints.
 */

import { ConflictError, type Progress, type QueueItem } from './api.js';
import { assignBindings, classForKey, type ClassBinding } from './bindings.js';

/** The slice of ApiClient the session needs (mockable in tests). */
export interface SessionApi {
  getQueue(sessionId: string): Promise<QueueItem[]>;
  getProgress(sessionId: string): Promise<Progress>;
  getClasses(sessionId: string): Promise<string[]>;
  submitLabels(
    sessionId: string,
    labels: { crop_id: string; label: string; batch_id: number; submitter?: string }[],
  ): Promise<{ accepted: number; errors: { crop_id: string; error: string }[] }>;
}

export type LabelOutcome =
  | { kind: 'accepted'; cropId: string; label: string }
  | { kind: 'conflict'; cropId: string; message: string }
  | { kind: 'rejected'; cropId: string; message: string }
  | { kind: 'no-current' }
  | { kind: 'unbound-key'; key: string };

export class LabelerSession {
  readonly sessionId: string;
  bindings: ClassBinding[] = [];
  queue: QueueItem[] = [];
  progress: Progress | null = null;
  submitter?: string;

  constructor(
    private readonly api: SessionApi,
    sessionId: string,
    submitter?: string,
  ) {
    this.sessionId = sessionId;
    this.submitter = submitter;
  }

  /** Populate the view; safe to call again at any time (reload). */
  async load(): Promise<void> {
    this.progress = await this.api.getProgress(this.sessionId);
    this.bindings = assignBindings(await this.api.getClasses(this.sessionId));
    this.queue = await this.api.getQueue(this.sessionId);
  }

  get current(): QueueItem | null {
    return this.queue.length > 0 ? this.queue[0] : null;
  }

  get phase(): Progress['state'] | 'loading' {
    return this.progress ? this.progress.state : 'loading';
  }

  /** Skip: re-queue the current crop at the end of the local list. */
  skip(): void {
    const item = this.queue.shift();
    if (item) this.queue.push(item);
  }

  /**
   * Label the current crop with the class bound to `key`. The crop is
   * advanced past optimistically; a conflict or rejection puts it back
   * at the front so the annotator sees it again.
   */
  async labelCurrent(key: string): Promise<LabelOutcome> {
    const item = this.current;
    if (!item) return { kind: 'no-current' };
    const label = classForKey(this.bindings, key);
    if (label === null) return { kind: 'unbound-key', key };

    this.queue.shift(); // optimistic advance
    try {
      const result = await this.api.submitLabels(this.sessionId, [
        { crop_id: item.crop_id, label, batch_id: item.batch_id, submitter: this.submitter },
      ]);
      const err = result.errors.find((e) => e.crop_id === item.crop_id);
      if (err) {
        this.queue.unshift(item); // rollback: show the crop again
        return { kind: 'rejected', cropId: item.crop_id, message: err.error };
      }
      // accepted === 0 with no error is an idempotent duplicate: the label
      // is already committed server-side, so advancing once is correct.
      return { kind: 'accepted', cropId: item.crop_id, label };
    } catch (e) {
      this.queue.unshift(item); // rollback
      if (e instanceof ConflictError) {
        return { kind: 'conflict', cropId: item.crop_id, message: e.message };
      }
      throw e;
    }
  }

  /**
   * Poll the server. Refreshes progress always, and pulls the queue when
   * the local one is exhausted (e.g. the server finished training and
   * issued the next batch).
   */
  async poll(): Promise<void> {
    this.progress = await this.api.getProgress(this.sessionId);
    if (this.queue.length === 0 && this.progress.state === 'awaiting_labels') {
      this.queue = await this.api.getQueue(this.sessionId);
    }
  }
}

/** Assert the learning curve is plottable: strictly increasing x-axis. */
export function checkCurveMonotone(curve: { labels: number }[]): void {
  for (let i = 1; i < curve.length; i++) {
    if (curve[i].labels <= curve[i - 1].labels) {
      throw new Error(`learning curve x-axis not strictly increasing at index ${i}`);
    }
  }
}
