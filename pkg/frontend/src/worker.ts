/**
 * Label decode worker: RLE streams for large rasters expand off the UI
 * thread so dragging and brushing stay responsive during level loads.
 */

import { rleDecode } from "./rle.js";

interface DecodeRequest {
  pairs: Uint32Array;
  expected?: number;
}

const scope = globalThis as unknown as {
  onmessage: ((ev: MessageEvent<DecodeRequest>) => void) | null;
  postMessage(message: unknown, transfer?: Transferable[]): void;
};

scope.onmessage = (ev) => {
  const labels = rleDecode(ev.data.pairs, ev.data.expected);
  scope.postMessage(labels, [labels.buffer]);
};
