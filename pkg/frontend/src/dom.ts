// DOM rendering: ontology-driven pickers, recommendation cards, timeline.
// All functions take the document so tests can drive a detached DOM.

import {
  ComposerState,
  selectableDimensions,
  validateComposer,
} from "./composer";
import { renderSentence } from "./sentences";
import type { Vocabulary, WirePattern, WireRecommendation } from "./types";

export interface CardHandlers {
  onAccept: (rank: number) => void;
  onToggleSelect: (rank: number, selected: boolean) => void;
}

export function renderVocabularyPickers(
  doc: Document,
  root: HTMLElement,
  vocab: Vocabulary,
  state: ComposerState,
): void {
  root.innerHTML = "";

  const opSelect = doc.createElement("select");
  opSelect.id = "op-picker";
  for (const op of vocab.ops) {
    const opt = doc.createElement("option");
    opt.value = op;
    opt.textContent = op;
    opt.selected = op === state.op;
    opSelect.appendChild(opt);
  }
  root.appendChild(opSelect);

  const measureList = doc.createElement("ul");
  measureList.id = "measure-picker";
  for (const m of vocab.measures) {
    const li = doc.createElement("li");
    li.dataset.id = m.id;
    li.textContent = m.label;
    if (state.measures.some((sel) => sel.id === m.id)) {
      li.classList.add("selected");
    }
    measureList.appendChild(li);
  }
  root.appendChild(measureList);

  // Dimension picker narrows to dimensions reachable from chosen measures.
  const connected = new Set(selectableDimensions(vocab, state));
  const dimList = doc.createElement("ul");
  dimList.id = "dimension-picker";
  for (const d of vocab.dimensions) {
    if (!connected.has(d.id)) continue;
    const li = doc.createElement("li");
    li.dataset.id = d.id;
    li.textContent = d.label;
    dimList.appendChild(li);
  }
  root.appendChild(dimList);

  const issues = validateComposer(vocab, state);
  const submit = doc.createElement("button");
  submit.id = "submit-query";
  submit.textContent = "Run analysis";
  submit.disabled = issues.length > 0 || vocab.measures.length === 0;
  root.appendChild(submit);

  const issueBox = doc.createElement("ul");
  issueBox.id = "composer-issues";
  for (const issue of issues) {
    const li = doc.createElement("li");
    li.textContent = issue;
    issueBox.appendChild(li);
  }
  root.appendChild(issueBox);
}

export function renderCards(
  doc: Document,
  root: HTMLElement,
  vocab: Vocabulary,
  cards: WireRecommendation[],
  handlers: CardHandlers,
): void {
  root.innerHTML = "";
  for (const card of cards.slice(0, 3)) {
    const div = doc.createElement("div");
    div.className = "card";
    div.dataset.rank = String(card.rank);

    const sentence = doc.createElement("p");
    sentence.className = "sentence";
    sentence.textContent = `${card.rank}. ${renderSentence(vocab, card.pattern)}`;
    div.appendChild(sentence);

    const score = doc.createElement("span");
    score.className = "score";
    score.textContent = card.score.toFixed(3);
    div.appendChild(score);

    const details = doc.createElement("details");
    const pre = doc.createElement("pre");
    pre.textContent = JSON.stringify(card.pattern, null, 2);
    details.appendChild(pre);
    div.appendChild(details);

    const accept = doc.createElement("button");
    accept.className = "accept";
    accept.textContent = "Use as next query";
    accept.addEventListener("click", () => handlers.onAccept(card.rank));
    div.appendChild(accept);

    const select = doc.createElement("input");
    select.type = "checkbox";
    select.className = "useful";
    select.addEventListener("change", () =>
      handlers.onToggleSelect(card.rank, select.checked),
    );
    div.appendChild(select);

    root.appendChild(div);
  }
}

export function renderTimeline(
  doc: Document,
  root: HTMLElement,
  vocab: Vocabulary,
  patterns: WirePattern[],
): void {
  root.innerHTML = "";
  patterns.forEach((p, i) => {
    const li = doc.createElement("li");
    li.textContent = `${i + 1}. ${renderSentence(vocab, p)}`;
    root.appendChild(li);
  });
}
