import { ApiClient, ApiError } from "./api.js";
import type {
  LabelSubmission,
  PrototypeSummary,
  StoredRecord,
} from "./types.js";

/** Local editing state for the prototype currently on screen. */
export interface PrototypeView {
  prototype: PrototypeSummary;
  bulkLabel: 0 | 1;
  exceptions: Set<number>;
}

/** Clicks the current card will cost if submitted as-is: 1 + |exceptions|. */
export function renderedClicks(view: PrototypeView): number {
  return 1 + view.exceptions.size;
}

export interface SessionEvents {
  onOfflineChange?(offline: boolean): void;
  onRecordStored?(record: StoredRecord): void;
}

/**
 * Prototype-at-a-time review flow for one part class.
 *
 * Prototypes are presented in the server's rank order. Every submission is
 * POSTed immediately; if the service is unreachable the submission is queued
 * and the click is still counted locally (the queue preserves order, so
 * last-write-wins on the server matches what the user saw). Reloading
 * restores the cursor from the listing's per-prototype `done` flags.
 */
export class ReviewSession {
  private views: PrototypeView[] = [];
  private cursor = 0;
  private clicks = 0;
  private queue: LabelSubmission[] = [];
  private isOffline = false;

  constructor(
    private readonly client: ApiClient,
    readonly partClass: string,
    readonly annotator: string = "",
    private readonly events: SessionEvents = {},
  ) {}

  async start(): Promise<void> {
    const listing = await this.client.prototypes(this.partClass);
    this.views = listing.prototypes.map((prototype) => ({
      prototype,
      bulkLabel: 1 as const,
      exceptions: new Set<number>(),
    }));
    this.cursor = this.views.findIndex((v) => !v.prototype.done);
    if (this.cursor < 0) this.cursor = this.views.length;
  }

  get current(): PrototypeView | null {
    return this.views[this.cursor] ?? null;
  }

  get finished(): boolean {
    return this.cursor >= this.views.length;
  }

  get totalClicks(): number {
    return this.clicks;
  }

  get offline(): boolean {
    return this.isOffline;
  }

  get pendingSubmissions(): number {
    return this.queue.length;
  }

  remaining(): number {
    return this.views.filter((v) => !v.prototype.done).length;
  }

  affirmAll(): void {
    this.edit((view) => {
      view.bulkLabel = 1;
      view.exceptions.clear();
    });
  }

  negateAll(): void {
    this.edit((view) => {
      view.bulkLabel = 0;
      view.exceptions.clear();
    });
  }

  togglePatch(memberIndex: number): void {
    this.edit((view) => {
      if (memberIndex < 0 || memberIndex >= view.prototype.members.length) {
        throw new RangeError(`no member patch at index ${memberIndex}`);
      }
      if (view.exceptions.has(memberIndex)) {
        view.exceptions.delete(memberIndex);
      } else {
        view.exceptions.add(memberIndex);
      }
    });
  }

  private edit(apply: (view: PrototypeView) => void): void {
    const view = this.current;
    if (view === null) throw new Error("session finished");
    apply(view);
  }

  /**
   * Submit the current card and advance. Counts renderedClicks toward the
   * session total; server rejections (4xx) re-throw without counting, while
   * transport failures queue the submission for a later flush.
   */
  async submitAndNext(): Promise<void> {
    const view = this.current;
    if (view === null) throw new Error("session finished");
    const submission: LabelSubmission = {
      prototype_id: view.prototype.id,
      part_class: this.partClass,
      bulk_label: view.bulkLabel,
      exceptions: [...view.exceptions].sort((a, b) => a - b),
      annotator: this.annotator,
    };
    await this.post(submission);
    this.clicks += renderedClicks(view);
    view.prototype.done = true;
    this.cursor += 1;
  }

  private async post(submission: LabelSubmission): Promise<void> {
    if (this.isOffline) {
      this.queue.push(submission);
      return;
    }
    try {
      const stored = await this.client.submitLabel(submission);
      this.events.onRecordStored?.(stored);
    } catch (error) {
      if (error instanceof ApiError) throw error; // server said no: surface it
      this.queue.push(submission);
      this.setOffline(true);
    }
  }

  /** Retry queued submissions in order; stops at the first transport failure. */
  async flushQueue(): Promise<number> {
    let sent = 0;
    while (this.queue.length > 0) {
      const submission = this.queue[0]!;
      try {
        const stored = await this.client.submitLabel(submission);
        this.events.onRecordStored?.(stored);
      } catch (error) {
        if (error instanceof ApiError) {
          this.queue.shift(); // permanently rejected; do not retry forever
          sent += 1;
          continue;
        }
        return sent;
      }
      this.queue.shift();
      sent += 1;
    }
    this.setOffline(false);
    return sent;
  }

  private setOffline(offline: boolean): void {
    if (offline !== this.isOffline) {
      this.isOffline = offline;
      this.events.onOfflineChange?.(offline);
    }
  }
}
