// App bootstrap: wires the composer, cards, feedback, and timeline together
// against the recommendation service.

import { ServiceClient } from "./api";
import {
  ComposerState,
  canSubmit,
  emptyComposer,
  fromWirePattern,
  toWirePattern,
} from "./composer";
import { renderCards, renderTimeline, renderVocabularyPickers } from "./dom";
import { SessionController } from "./session";
import type { Vocabulary } from "./types";

const BASE_URL = (window as any).BIGUIDE_URL ?? "";

async function boot(): Promise<void> {
  const doc = document;
  const composerRoot = doc.getElementById("composer")!;
  const cardsRoot = doc.getElementById("cards")!;
  const timelineRoot = doc.getElementById("timeline")!;
  const banner = doc.getElementById("banner")!;

  const api = new ServiceClient(BASE_URL);
  let vocab: Vocabulary;
  try {
    vocab = await api.vocabulary();
    banner.textContent = "";
  } catch (err) {
    banner.textContent = `service unreachable: ${err}`;
    const retry = doc.createElement("button");
    retry.textContent = "retry";
    retry.addEventListener("click", () => void boot());
    banner.appendChild(retry);
    return;
  }

  const session = new SessionController(api);
  await session.start();
  let composer: ComposerState = emptyComposer();
  const selected = new Set<number>();

  const redraw = () => {
    renderVocabularyPickers(doc, composerRoot as HTMLElement, vocab, composer);
    renderTimeline(doc, timelineRoot as HTMLElement, vocab,
      session.timeline.map((t) => t.pattern));
    renderCards(doc, cardsRoot as HTMLElement, vocab, session.cards, {
      onAccept: (rank) => {
        composer = fromWirePattern(session.accept(rank));
        redraw();
      },
      onToggleSelect: (rank, isSelected) => {
        if (isSelected) selected.add(rank);
        else selected.delete(rank);
      },
    });
    wireComposerEvents();
  };

  const wireComposerEvents = () => {
    const opPicker = doc.getElementById("op-picker") as HTMLSelectElement;
    opPicker?.addEventListener("change", () => {
      composer.op = opPicker.value as ComposerState["op"];
      redraw();
    });
    doc.querySelectorAll("#measure-picker li").forEach((li) => {
      li.addEventListener("click", () => {
        const id = (li as HTMLElement).dataset.id!;
        const at = composer.measures.findIndex((m) => m.id === id);
        if (at >= 0) composer.measures.splice(at, 1);
        else composer.measures.push({ id, agg: "COUNT" });
        redraw();
      });
    });
    doc.querySelectorAll("#dimension-picker li").forEach((li) => {
      li.addEventListener("click", () => {
        const id = (li as HTMLElement).dataset.id!;
        const at = composer.dimensions.findIndex((d) => d.id === id);
        if (at >= 0) composer.dimensions.splice(at, 1);
        else composer.dimensions.push({ id, role: "GROUP_BY" });
        redraw();
      });
    });
    doc.getElementById("submit-query")?.addEventListener("click", () => {
      void submit();
    });
    doc.getElementById("send-feedback")?.addEventListener("click", () => {
      void session.sendFeedback([...selected]).then(() => {
        selected.clear();
        redraw();
      });
    });
  };

  const submit = async () => {
    if (!canSubmit(vocab, composer)) return;
    if (session.cards.length > 0 && !session.feedbackSent) {
      await session.sendFeedback([...selected]).catch(() => undefined);
      selected.clear();
    }
    await session.submit(toWirePattern(composer));
    composer = emptyComposer();
    redraw();
  };

  redraw();
}

if (typeof window !== "undefined" && typeof document !== "undefined") {
  void boot();
}
