/**
 * Browser entry point: DOM wiring only. Everything with logic worth
 * testing lives in the imported modules.
 */

import { InputSampler, KeyboardState, readGamepad } from "./input.js";
import { drawBar, drawGauge, drawScene, Viewport } from "./render.js";
import { SessionSocket } from "./socket.js";
import { CockpitViewModel } from "./viewmodel.js";

const INPUT_HZ = 60;

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (node === null) throw new Error(`missing element #${id}`);
  return node as T;
}

function serverUrl(): string {
  const params = new URLSearchParams(window.location.search);
  const host = params.get("server") ?? `${window.location.hostname}:8000`;
  return `ws://${host}/session`;
}

function main(): void {
  const canvas = el<HTMLCanvasElement>("scene");
  const instruments = el<HTMLCanvasElement>("instruments");
  const sceneCtx = canvas.getContext("2d");
  const instrCtx = instruments.getContext("2d");
  if (sceneCtx === null || instrCtx === null) {
    throw new Error("canvas 2d context unavailable");
  }
  const modeSelect = el<HTMLSelectElement>("mode");
  const startButton = el<HTMLButtonElement>("start");
  const resetButton = el<HTMLButtonElement>("reset");
  const overlay = el<HTMLDivElement>("overlay");
  const overlayText = el<HTMLDivElement>("overlay-text");
  const reconnectButton = el<HTMLButtonElement>("reconnect");
  const noticeBox = el<HTMLDivElement>("notice");
  const statusLine = el<HTMLDivElement>("status");
  const metricsBox = el<HTMLTableElement>("metrics");
  const readouts = {
    driver: el<HTMLSpanElement>("driver-value"),
    haptic: el<HTMLSpanElement>("haptic-value"),
    authority: el<HTMLSpanElement>("authority-value"),
    activation: el<HTMLSpanElement>("activation-value"),
    grip: el<HTMLSpanElement>("grip-value"),
  };

  const params = new URLSearchParams(window.location.search);
  const vm = new CockpitViewModel(params.get("config"));
  const keyboard = new KeyboardState();
  keyboard.attach(window);
  const sampler = new InputSampler();

  const socket = new SessionSocket(serverUrl(), {
    onFrame: (frame) => {
      vm.apply(frame);
      if (frame.type === "hello" && modeSelect.options.length === 0) {
        for (const mode of frame.modes) {
          const option = document.createElement("option");
          option.value = mode.id;
          option.textContent = mode.label;
          modeSelect.appendChild(option);
        }
        modeSelect.value = frame.mode;
      }
    },
    onStatus: (online) => {
      vm.status = online ? "online" : "disconnected";
      if (online) sampler.invalidate();
    },
    onBadFrame: (reason) => {
      vm.notice = reason;
    },
  }, (url) => new WebSocket(url) as unknown as import("./socket.js").SocketLike);
  socket.connect();

  modeSelect.addEventListener("change", () => {
    socket.send({ type: "input", mode: modeSelect.value });
  });
  startButton.addEventListener("click", () => {
    socket.send({ type: "input", start: true });
  });
  resetButton.addEventListener("click", () => {
    socket.send({ type: "input", reset: true });
  });
  reconnectButton.addEventListener("click", () => {
    if (!socket.connected) socket.connect();
  });

  // input sampling decoupled from the render loop
  window.setInterval(() => {
    if (vm.fatalError !== null || vm.phase !== "running") return;
    const stick = typeof navigator.getGamepads === "function"
      ? readGamepad(Array.from(navigator.getGamepads())) : null;
    const message = sampler.sample(keyboard.flags(), stick);
    if (message !== null) socket.send(message);
  }, 1000 / INPUT_HZ);

  const viewport: Viewport = {
    width: canvas.width,
    height: canvas.height,
    metersPerPixel: 0.12,
    followX: 0,
  };

  function renderInstruments(): void {
    if (instrCtx === null) return;
    instrCtx.clearRect(0, 0, instruments.width, instruments.height);
    const driver = vm.driverBar();
    const haptic = vm.hapticBar();
    drawBar(instrCtx, driver, 20, 18, 240, 16, false);
    drawBar(instrCtx, haptic, 20, 58, 240, 16, true);
    drawGauge(instrCtx, vm.authorityGauge(), 360, 78, 52);
    readouts.driver.textContent = driver.value.toFixed(2);
    readouts.haptic.textContent = haptic.value.toFixed(2);
    readouts.authority.textContent = vm.authorityGauge().toFixed(3);
    readouts.activation.textContent = vm.activation().toFixed(3);
    readouts.grip.textContent = vm.gripLevel().toFixed(2);
  }

  function renderPanels(): void {
    statusLine.textContent = `${vm.status} | phase: ${vm.phase}`;
    noticeBox.textContent = vm.notice ?? "";
    noticeBox.style.display = vm.notice === null ? "none" : "block";
    if (vm.fatalError !== null) {
      overlay.style.display = "flex";
      overlayText.textContent = vm.fatalError;
      reconnectButton.style.display = "none";
      return;
    }
    const lost = vm.status === "disconnected";
    overlay.style.display = lost ? "flex" : "none";
    if (lost) {
      overlayText.textContent = "connection lost; the trial is paused";
      reconnectButton.style.display = "inline-block";
    }
    metricsBox.innerHTML = "";
    for (const [name, value] of vm.metricsRows()) {
      const row = metricsBox.insertRow();
      row.insertCell().textContent = name;
      row.insertCell().textContent = value;
    }
  }

  function frame(): void {
    if (vm.hello !== null && sceneCtx !== null) {
      viewport.followX = vm.state !== null ? vm.state.x : 0;
      drawScene(sceneCtx, vm.hello, vm.state, viewport);
    }
    renderInstruments();
    renderPanels();
    window.requestAnimationFrame(frame);
  }
  window.requestAnimationFrame(frame);
}

main();
