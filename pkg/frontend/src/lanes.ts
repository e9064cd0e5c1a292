// Lane geometry: all lanes share one time axis. Reaction bars live in their
// own lane but span the same x scale as the clip lane, so an open bar visibly
// overlaps the clips that keep arriving while generation runs.

import { ViewModel } from "./types.js";

export interface Positioned {
  x: number;
  width: number;
}

export interface LaneLayout {
  axisMs: [number, number];
  width: number;
  frameTicks: { x: number; sim: number | null }[];
  clipRects: (Positioned & {
    index: number;
    cause: string;
    highlighted: boolean;
  })[];
  decisionMarks: { x: number; action: string; p: number }[];
  reactionBars: (Positioned & { open: boolean; silent: boolean | null })[];
  questionFlags: { x: number; id: string; optimistic: boolean }[];
  silentMarks: { x: number }[];
}

export function timeAxis(vm: ViewModel): [number, number] {
  let end = 1000;
  for (const f of vm.frames) end = Math.max(end, f.t);
  for (const c of vm.clips) end = Math.max(end, c.spanMs[1]);
  for (const r of vm.reactions) end = Math.max(end, r.endT ?? r.triggerT);
  return [0, end];
}

export function computeLanes(vm: ViewModel, width = 1000): LaneLayout {
  const [t0, t1] = timeAxis(vm);
  const scale = width / Math.max(1, t1 - t0);
  const x = (t: number) => (t - t0) * scale;

  const highlighted = new Set<number>(
    vm.selectedAnswer !== null && vm.answers[vm.selectedAnswer]
      ? vm.answers[vm.selectedAnswer].grounded.map((g) => g.clipIndex)
      : [],
  );

  return {
    axisMs: [t0, t1],
    width,
    frameTicks: vm.frames.map((f) => ({ x: x(f.t), sim: f.simPrev })),
    clipRects: vm.clips.map((c) => ({
      index: c.index,
      x: x(c.spanMs[0]),
      width: Math.max(1, x(c.spanMs[1]) - x(c.spanMs[0])),
      cause: c.cause,
      highlighted: highlighted.has(c.index),
    })),
    decisionMarks: vm.decisions.map((d) => ({ x: x(d.t), action: d.action, p: d.p })),
    reactionBars: vm.reactions.map((r) => ({
      x: x(r.triggerT),
      width: Math.max(2, x(r.endT ?? t1) - x(r.triggerT)),
      open: r.endT === null,
      silent: r.silent,
    })),
    questionFlags: vm.questions.map((q) => ({
      x: q.optimistic ? width : x(q.t),
      id: q.id,
      optimistic: q.optimistic,
    })),
    silentMarks: vm.silents.map((s) => ({ x: x(s.t) })),
  };
}
