// Session controller: the dialog loop state behind the UI.
//
// Holds the append-only timeline of issued queries, the current
// recommendation cards, and feedback bookkeeping.  Accepting a card hands
// back the recommended pattern verbatim so a subsequent unmodified submit
// reproduces it byte-identically on the wire.

import type { ServiceClient } from "./api";
import type { WirePattern, WireRecommendation } from "./types";

export interface TimelineEntry {
  index: number;
  pattern: WirePattern;
}

export class SessionController {
  sessionId: string | null = null;
  timeline: TimelineEntry[] = [];
  cards: WireRecommendation[] = [];
  feedbackSent = false;
  private busy = false;

  constructor(private api: ServiceClient) {}

  async start(): Promise<void> {
    this.sessionId = await this.api.createSession();
    this.timeline = [];
    this.cards = [];
    this.feedbackSent = false;
  }

  /** Submit a composed pattern; the timeline grows and cards refresh. */
  async submit(pattern: WirePattern): Promise<WireRecommendation[]> {
    if (!this.sessionId) throw new Error("session not started");
    if (this.busy) throw new Error("request already in flight");
    this.busy = true;
    try {
      const resp = await this.api.submitQuery(this.sessionId, pattern);
      this.timeline.push({ index: resp.state_index, pattern: resp.echo });
      this.cards = resp.recommendations.slice(0, 3);
      this.feedbackSent = false;
      return this.cards;
    } finally {
      this.busy = false;
    }
  }

  /** The accepted card's pattern, structurally cloned for the composer. */
  accept(rank: number): WirePattern {
    const card = this.cards.find((c) => c.rank === rank);
    if (!card) throw new Error(`no card at rank ${rank}`);
    return JSON.parse(JSON.stringify(card.pattern)) as WirePattern;
  }

  async sendFeedback(selectedRanks: number[]): Promise<void> {
    if (!this.sessionId) throw new Error("session not started");
    const valid = new Set(this.cards.map((c) => c.rank));
    for (const r of selectedRanks) {
      if (!valid.has(r)) throw new Error(`rank ${r} is not on a current card`);
    }
    await this.api.sendFeedback(this.sessionId, selectedRanks);
    this.feedbackSent = true;
  }
}
