/**
 * Page wiring: keyboard handling and the 2-second progress poll.
 *
 * URL format: index.html?server=http://127.0.0.1:8000&session=<id>
 */

import { ApiClient } from './api.js';
import { SKIP_KEY } from './bindings.js';
import { LabelerSession } from './session.js';
import {
  renderBindings,
  renderCrop,
  renderCurve,
  renderError,
  renderProgress,
} from './view.js';

const POLL_INTERVAL_MS = 2000;
const IGNORED_TAGS = new Set(['INPUT', 'TEXTAREA', 'SELECT']);

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

async function boot(): Promise<void> {
  const params = new URLSearchParams(window.location.search);
  const server = params.get('server') ?? 'http://127.0.0.1:8000';
  const sessionId = params.get('session');
  const errorBox = el<HTMLElement>('error');
  if (!sessionId) {
    renderError(errorBox, 'add ?session=<id> to the URL (create one via POST /sessions)');
    return;
  }

  const api = new ApiClient(server);
  const session = new LabelerSession(api, sessionId, params.get('submitter') ?? undefined);

  const redraw = () => {
    renderBindings(el('bindings'), session.bindings);
    renderCrop(
      el<HTMLImageElement>('crop'),
      el('caption'),
      session.current,
      (item) => api.cropUrl(item),
      session.queue.length,
    );
    renderProgress(el('progress'), session.progress);
    if (session.progress) renderCurve(el('curve'), session.progress.curve);
  };

  try {
    await session.load();
  } catch (e) {
    renderError(errorBox, `cannot reach session: ${(e as Error).message} — reload to retry`);
    return;
  }
  renderError(errorBox, null);
  redraw();

  window.addEventListener('keydown', (event: KeyboardEvent) => {
    const target = event.target as HTMLElement | null;
    if (target && (IGNORED_TAGS.has(target.tagName) || target.isContentEditable)) return;
    if (event.key === SKIP_KEY) {
      event.preventDefault();
      session.skip();
      redraw();
      return;
    }
    if (event.key.length === 1) {
      event.preventDefault();
      void session.labelCurrent(event.key).then((outcome) => {
        if (outcome.kind === 'conflict' || outcome.kind === 'rejected') {
          renderError(errorBox, `${outcome.cropId}: ${outcome.message}`);
        } else {
          renderError(errorBox, null);
        }
        redraw();
      });
    }
  });

  setInterval(() => {
    void session
      .poll()
      .then(() => {
        renderError(errorBox, null);
        redraw();
      })
      .catch((e: Error) => renderError(errorBox, `poll failed: ${e.message} — retrying`));
  }, POLL_INTERVAL_MS);
}

void boot();
