// Rendering is split in two: render() maps the view model to a plain view
// tree (pure, snapshot-testable without a DOM), applyToDom() materializes
// that tree in the browser.

import { computeLanes, LaneLayout } from "./lanes.js";
import { ViewModel } from "./types.js";

export interface VNode {
  tag: string;
  attrs?: Record<string, string>;
  children?: (VNode | string)[];
}

function el(tag: string, attrs: Record<string, string>, ...children: (VNode | string)[]): VNode {
  return { tag, attrs, children };
}

function fmtMs(t: number): string {
  return (t / 1000).toFixed(1) + "s";
}

function laneSvg(lanes: LaneLayout): VNode {
  const rows: VNode[] = [];
  // Frame activity sparkline (lane y 0-28).
  for (const tick of lanes.frameTicks) {
    const sim = tick.sim ?? 1;
    const h = Math.max(1, (1 - Math.min(1, Math.max(-1, sim))) * 14 + 2);
    rows.push(
      el("rect", {
        class: "frame-tick",
        x: tick.x.toFixed(1),
        y: (28 - h).toFixed(1),
        width: "1",
        height: h.toFixed(1),
      }),
    );
  }
  // Clip lane (y 32-56).
  for (const clip of lanes.clipRects) {
    rows.push(
      el("rect", {
        class: "clip" + (clip.highlighted ? " highlighted" : "") + ` cause-${clip.cause}`,
        "data-clip-index": String(clip.index),
        x: clip.x.toFixed(1),
        y: "32",
        width: clip.width.toFixed(1),
        height: "24",
      }),
    );
  }
  // Decision lane (y 60-72).
  for (const mark of lanes.decisionMarks) {
    rows.push(
      el("circle", {
        class: `decision ${mark.action}`,
        cx: mark.x.toFixed(1),
        cy: "66",
        r: mark.action === "respond" ? "5" : "2",
      }),
    );
  }
  // Reaction lane (y 76-92): bars overlap the clip lane's time range.
  for (const bar of lanes.reactionBars) {
    rows.push(
      el("rect", {
        class: "reaction" + (bar.open ? " open" : "") + (bar.silent ? " silent" : ""),
        x: bar.x.toFixed(1),
        y: "76",
        width: bar.width.toFixed(1),
        height: "16",
      }),
    );
  }
  for (const flag of lanes.questionFlags) {
    rows.push(
      el("line", {
        class: "question-flag" + (flag.optimistic ? " optimistic" : ""),
        "data-question-id": flag.id,
        x1: flag.x.toFixed(1),
        x2: flag.x.toFixed(1),
        y1: "0",
        y2: "92",
      }),
    );
  }
  for (const mark of lanes.silentMarks) {
    rows.push(el("text", { class: "silent-mark", x: mark.x.toFixed(1), y: "90" }, "~"));
  }
  return el(
    "svg",
    { class: "lanes", viewBox: `0 0 ${lanes.width} 96`, preserveAspectRatio: "none" },
    ...rows,
  );
}

function answerFeed(vm: ViewModel): VNode {
  const cards = vm.answers.map((answer, i) =>
    el(
      "div",
      {
        class: "answer-card" + (vm.selectedAnswer === i ? " selected" : ""),
        "data-answer-index": String(i),
        "data-question-id": answer.questionId,
      },
      el("div", { class: "answer-head" }, `#${answer.ordinal} @ ${fmtMs(answer.emitT)}`),
      el("div", { class: "answer-text" }, answer.text),
      el(
        "div",
        { class: "answer-grounding" },
        ...answer.grounded.map((g) =>
          el(
            "span",
            {
              class: "grounded-ref",
              "data-clip-index": String(g.clipIndex),
            },
            `clip ${g.clipIndex} [${fmtMs(g.spanMs[0])}..${fmtMs(g.spanMs[1])}) p=${g.p.toFixed(2)}`,
          ),
        ),
      ),
    ),
  );
  const silents = vm.silents.map((s) =>
    el("div", { class: "silent-card" }, `silent @ ${fmtMs(s.t)}`),
  );
  return el("div", { class: "answers" }, ...cards, ...silents);
}

export function render(vm: ViewModel): VNode {
  const lanes = computeLanes(vm);
  const statusLine =
    `session ${vm.sessionId} — ${vm.status} — ${vm.connection}` +
    (vm.streamEnded ? " — stream ended" : "");
  return el(
    "div",
    { class: "console" },
    el(
      "div",
      { class: "status-bar" },
      el("span", { class: `status ${vm.status}` }, statusLine),
      el("span", { class: "counts" },
        `frames=${vm.frames.length} clips=${vm.clips.length} answers=${vm.answers.length}` +
        ` suppressed=${vm.suppressed} dropped=${vm.dropped}`),
    ),
    vm.lastError ? el("div", { class: "toast error" }, vm.lastError) : el("div", { class: "toast empty" }),
    laneSvg(lanes),
    answerFeed(vm),
    el(
      "div",
      { class: "composer" },
      el("input", {
        class: "question-input",
        type: "text",
        placeholder: "ask about the stream…",
        value: vm.pendingInput,
      }),
      el(
        "button",
        {
          class: "submit-question",
          disabled: vm.pendingInput.trim() === "" ? "disabled" : "",
        },
        "ask",
      ),
      el("button", { class: "control play" }, "play"),
      el("button", { class: "control pause" }, "pause"),
      el("button", { class: "control stop" }, "stop"),
    ),
  );
}

export function applyToDom(root: Element, tree: VNode): void {
  const doc = root.ownerDocument;

  function build(node: VNode | string): Node {
    if (typeof node === "string") {
      return doc.createTextNode(node);
    }
    const svgTags = new Set(["svg", "rect", "circle", "line", "text"]);
    const element = svgTags.has(node.tag)
      ? doc.createElementNS("http://www.w3.org/2000/svg", node.tag)
      : doc.createElement(node.tag);
    for (const [key, value] of Object.entries(node.attrs ?? {})) {
      if (value !== "") element.setAttribute(key, value);
    }
    for (const child of node.children ?? []) {
      element.appendChild(build(child));
    }
    return element;
  }

  root.replaceChildren(build(tree));
}
