// Pure state reducer. The view model is a function of the received events
// plus local input state; events are keyed by seq and applied exactly once,
// so replaying any prefix (or a reconnect overlap) renders identically.

import {
  Action,
  AnswerCard,
  GatewayEvent,
  GroundedRef,
  ViewModel,
} from "./types.js";

function groundedRefs(raw: unknown): GroundedRef[] {
  if (!Array.isArray(raw)) return [];
  return raw.map((g: Record<string, unknown>) => ({
    clipIndex: g["clip_index"] as number,
    spanMs: g["span_ms"] as [number, number],
    p: g["p"] as number,
  }));
}

function applyEvent(vm: ViewModel, event: GatewayEvent): ViewModel {
  if (event.seq <= vm.lastSeq) {
    return vm; // duplicate from a reconnect replay
  }
  const next: ViewModel = { ...vm, lastSeq: event.seq, applied: vm.applied + 1 };
  const p = event.payload;
  switch (event.kind) {
    case "SessionStatus":
      next.status = p["status"] as ViewModel["status"];
      break;
    case "FrameArrived":
      next.frames = [...vm.frames, {
        t: event.t_ms,
        simPrev: (p["sim_prev"] as number | null) ?? null,
      }];
      break;
    case "FrameDropped":
      next.dropped = vm.dropped + 1;
      break;
    case "ClipEmitted":
      next.clips = [...vm.clips, {
        index: p["index"] as number,
        spanMs: p["span_ms"] as [number, number],
        frameCount: p["frame_count"] as number,
        cause: p["cause"] as string,
        boundarySim: (p["boundary_sim"] as number | null) ?? null,
      }];
      break;
    case "QuestionInserted": {
      // The authoritative event replaces any optimistic chip.
      const confirmed = vm.questions.filter((q) => !q.optimistic);
      next.questions = [...confirmed, {
        id: p["question_id"] as string,
        t: event.t_ms,
        text: p["text"] as string,
        optimistic: false,
      }];
      break;
    }
    case "Decision":
      next.decisions = [...vm.decisions, {
        t: event.t_ms,
        p: p["p_respond"] as number,
        action: p["action"] as string,
        clipIndex: p["clip_index"] as number,
      }];
      break;
    case "ReactionStart":
      next.reactions = [...vm.reactions, {
        questionId: p["question_id"] as string,
        triggerT: p["trigger_t_ms"] as number,
        endT: null,
        silent: null,
      }];
      break;
    case "ReactionEnd":
      next.reactions = vm.reactions.map((bar) =>
        bar.triggerT === (p["trigger_t_ms"] as number) && bar.endT === null
          ? { ...bar, endT: event.t_ms, silent: p["silent"] as boolean }
          : bar,
      );
      break;
    case "AnswerEmitted": {
      const card: AnswerCard = {
        questionId: p["question_id"] as string,
        ordinal: p["ordinal"] as number,
        triggerT: p["trigger_t_ms"] as number,
        emitT: p["emit_t_ms"] as number,
        text: p["text"] as string,
        grounded: groundedRefs(p["grounded"]),
      };
      next.answers = [...vm.answers, card];
      next.selectedAnswer = next.answers.length - 1; // newest highlights its clips
      break;
    }
    case "Silent":
      next.silents = [...vm.silents, {
        t: event.t_ms,
        triggerT: p["trigger_t_ms"] as number,
      }];
      break;
    case "Suppressed":
      next.suppressed = vm.suppressed + 1;
      break;
    case "StreamEnded":
      next.streamEnded = true;
      break;
    default:
      break; // Failed and future kinds still count as applied
  }
  return next;
}

export function reduce(vm: ViewModel, action: Action): ViewModel {
  switch (action.type) {
    case "event":
      return applyEvent(vm, action.event);
    case "input":
      return { ...vm, pendingInput: action.text };
    case "optimistic_question":
      return {
        ...vm,
        pendingInput: "",
        questions: [...vm.questions, {
          id: "pending",
          t: -1,
          text: action.text,
          optimistic: true,
        }],
      };
    case "select_answer":
      return { ...vm, selectedAnswer: action.index };
    case "connection":
      return { ...vm, connection: action.state };
    case "error":
      return { ...vm, lastError: action.message };
    default:
      return vm;
  }
}

export function replay(vm: ViewModel, events: GatewayEvent[]): ViewModel {
  let state = vm;
  for (const event of events) {
    state = reduce(state, { type: "event", event });
  }
  return state;
}
