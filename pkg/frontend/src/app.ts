// Store + DOM wiring: a single reducer drives renders; user gestures go
// through the client, never mutating the view model directly.

import { GatewayClient } from "./client.js";
import { reduce } from "./reducer.js";
import { applyToDom, render } from "./render.js";
import { Action, initialViewModel, ViewModel } from "./types.js";

export class ConsoleApp {
  vm: ViewModel;
  client: GatewayClient;
  private renderScheduled = false;

  constructor(
    private readonly root: Element | null,
    baseUrl: string,
    sessionId: string,
  ) {
    this.vm = initialViewModel(sessionId);
    this.client = new GatewayClient(baseUrl, sessionId, (a) => this.dispatch(a));
  }

  dispatch(action: Action): void {
    this.vm = reduce(this.vm, action);
    this.scheduleRender();
  }

  start(): void {
    this.client.start();
    this.scheduleRender();
  }

  private scheduleRender(): void {
    if (this.root === null || this.renderScheduled) return;
    this.renderScheduled = true;
    queueMicrotask(() => {
      this.renderScheduled = false;
      applyToDom(this.root!, render(this.vm));
      this.bindControls();
    });
  }

  private bindControls(): void {
    const root = this.root!;
    const input = root.querySelector<HTMLInputElement>(".question-input");
    input?.addEventListener("input", () =>
      this.dispatch({ type: "input", text: input.value }),
    );
    input?.addEventListener("keydown", (ev) => {
      if ((ev as KeyboardEvent).key === "Enter") void this.submit();
    });
    root.querySelector(".submit-question")?.addEventListener("click", () => void this.submit());
    for (const action of ["play", "pause", "stop"] as const) {
      root.querySelector(`.control.${action}`)?.addEventListener("click", () => {
        void this.client.control(action);
      });
    }
    root.querySelectorAll<HTMLElement>(".answer-card").forEach((card) => {
      card.addEventListener("click", () => {
        const index = Number(card.dataset["answerIndex"]);
        this.dispatch({ type: "select_answer", index });
      });
    });
  }

  private async submit(): Promise<void> {
    const text = this.vm.pendingInput;
    if (!text.trim()) return;
    await this.client.submitQuestion(text);
  }
}
