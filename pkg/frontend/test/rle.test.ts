import { describe, expect, it } from "vitest";

import { decodeRle } from "../src/rle.js";

function encode(resolution: number, cells: number[]): string {
  const runs: number[] = [];
  let solid = 0;
  let run = 0;
  for (const v of cells) {
    if (v === solid) {
      run++;
    } else {
      runs.push(run);
      solid = 1 - solid;
      run = 1;
    }
  }
  runs.push(run);
  return `${resolution}|${runs.join(",")}`;
}

describe("decodeRle", () => {
  it("round-trips a random bitmap", () => {
    const cells = Array.from({ length: 64 }, (_, i) => ((i * 7) % 3 === 0 ? 1 : 0));
    const decoded = decodeRle(encode(8, cells));
    expect(decoded.resolution).toBe(8);
    expect(Array.from(decoded.cells)).toEqual(cells);
  });

  it("handles an all-solid bitmap (leading zero run)", () => {
    const decoded = decodeRle("4|0,16");
    expect(Array.from(decoded.cells)).toEqual(new Array(16).fill(1));
  });

  it("handles an all-empty bitmap", () => {
    const decoded = decodeRle("4|16");
    expect(Array.from(decoded.cells)).toEqual(new Array(16).fill(0));
  });

  it("rejects truncated payloads", () => {
    expect(() => decodeRle("4|8")).toThrow(/covers 8 cells/);
  });

  it("rejects malformed headers", () => {
    expect(() => decodeRle("nope")).toThrow(/malformed/);
    expect(() => decodeRle("0|")).toThrow(/resolution/);
  });
});
