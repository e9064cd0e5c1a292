// Gateway wire types: one JSON line per event, seq strictly increasing.

export interface GatewayEvent {
  seq: number;
  t_ms: number;
  kind: string;
  payload: Record<string, unknown>;
}

export interface GroundedRef {
  clipIndex: number;
  spanMs: [number, number];
  p: number;
}

export interface ClipRow {
  index: number;
  spanMs: [number, number];
  frameCount: number;
  cause: string;
  boundarySim: number | null;
}

export interface FrameTick {
  t: number;
  simPrev: number | null;
}

export interface DecisionMark {
  t: number;
  p: number;
  action: string;
  clipIndex: number;
}

export interface ReactionBar {
  questionId: string;
  triggerT: number;
  endT: number | null; // null while in flight
  silent: boolean | null;
}

export interface AnswerCard {
  questionId: string;
  ordinal: number;
  triggerT: number;
  emitT: number;
  text: string;
  grounded: GroundedRef[];
}

export interface QuestionChip {
  id: string;
  t: number;
  text: string;
  optimistic: boolean;
}

export type SessionStatus = "unknown" | "idle" | "playing" | "paused" | "ended";
export type ConnectionState = "connecting" | "live" | "reconnecting" | "closed";

export interface ViewModel {
  sessionId: string;
  status: SessionStatus;
  connection: ConnectionState;
  lastSeq: number;
  applied: number; // count of events applied exactly once
  frames: FrameTick[];
  dropped: number;
  clips: ClipRow[];
  decisions: DecisionMark[];
  reactions: ReactionBar[];
  answers: AnswerCard[];
  silents: { t: number; triggerT: number }[];
  suppressed: number;
  questions: QuestionChip[];
  pendingInput: string;
  selectedAnswer: number | null; // index into answers; grounded spans highlight
  streamEnded: boolean;
  lastError: string | null;
}

export type Action =
  | { type: "event"; event: GatewayEvent }
  | { type: "input"; text: string }
  | { type: "optimistic_question"; text: string }
  | { type: "select_answer"; index: number | null }
  | { type: "connection"; state: ConnectionState }
  | { type: "error"; message: string | null };

export function initialViewModel(sessionId: string): ViewModel {
  return {
    sessionId,
    status: "unknown",
    connection: "connecting",
    lastSeq: -1,
    applied: 0,
    frames: [],
    dropped: 0,
    clips: [],
    decisions: [],
    reactions: [],
    answers: [],
    silents: [],
    suppressed: 0,
    questions: [],
    pendingInput: "",
    selectedAnswer: null,
    streamEnded: false,
    lastError: null,
  };
}
