/**
 * DOM rendering. Pure functions from state to markup; no state lives here.
 */

import type { CurvePoint, Progress, QueueItem } from './api.js';
import type { ClassBinding } from './bindings.js';
import { checkCurveMonotone } from './session.js';

export function renderBindings(el: HTMLElement, bindings: ClassBinding[]): void {
  el.innerHTML = bindings
    .map(
      (b) =>
        `<li><kbd>${escapeHtml(b.key)}</kbd> ${escapeHtml(b.className)}</li>`,
    )
    .join('');
}

export function renderCrop(
  img: HTMLImageElement,
  caption: HTMLElement,
  item: QueueItem | null,
  cropUrl: (item: QueueItem) => string,
  queueLength: number,
): void {
  if (!item) {
    img.removeAttribute('src');
    img.alt = 'no pending crop';
    caption.textContent = 'queue empty';
    return;
  }
  img.src = cropUrl(item);
  img.alt = `crop ${item.crop_id}`;
  caption.textContent = `${item.crop_id} — ${queueLength} left in batch`;
}

export function renderProgress(el: HTMLElement, progress: Progress | null): void {
  if (!progress) {
    el.textContent = 'loading…';
    return;
  }
  const banner =
    progress.state === 'training'
      ? ' — training, next batch shortly'
      : progress.state === 'done'
        ? ' — budget reached, session complete'
        : '';
  el.textContent =
    `${progress.labels_acquired} / ${progress.budget} labels, step ${progress.step}${banner}`;
}

/** Inline SVG line chart of the learning curve. */
export function renderCurve(el: HTMLElement, curve: CurvePoint[]): void {
  checkCurveMonotone(curve);
  if (curve.length === 0) {
    el.innerHTML = '';
    return;
  }
  const w = 360;
  const h = 120;
  const pad = 6;
  const xs = curve.map((p) => p.labels);
  const x0 = xs[0];
  const x1 = xs[xs.length - 1];
  const span = Math.max(1, x1 - x0);
  const pts = curve
    .map((p) => {
      const x = pad + ((p.labels - x0) / span) * (w - 2 * pad);
      const y = h - pad - p.accuracy * (h - 2 * pad);
      return `${x.toFixed(1)},${y.toFixed(1)}`;
    })
    .join(' ');
  const last = curve[curve.length - 1];
  el.innerHTML =
    `<svg viewBox="0 0 ${w} ${h}" width="${w}" height="${h}">` +
    `<polyline fill="none" stroke="currentColor" stroke-width="1.5" points="${pts}"/>` +
    `</svg>` +
    `<div>holdout accuracy ${(last.accuracy * 100).toFixed(1)}% at ${last.labels} labels</div>`;
}

export function renderError(el: HTMLElement, message: string | null): void {
  el.textContent = message ?? '';
  el.style.display = message ? 'block' : 'none';
}

function escapeHtml(s: string): string {
  return s
    .replaceAll('&', '&amp;')
    .replaceAll('<', '&lt;')
    .replaceAll('>', '&gt;')
    .replaceAll('"', '&quot;');
}
