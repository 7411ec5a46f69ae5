/** NDJSON framing across arbitrary chunk boundaries. */

import { expect, test } from "vitest";

import { LineSplitter, parseRecord } from "../src/ndjson.js";

test("lines split only at newlines, whatever the chunking", () => {
  const splitter = new LineSplitter();
  expect(splitter.push('{"a"')).toEqual([]);
  expect(splitter.push(':1}\n{"b":2}\n{"c"')).toEqual(['{"a":1}', '{"b":2}']);
  expect(splitter.push(":3}")).toEqual([]);
  expect(splitter.flush()).toBe('{"c":3}');
  expect(splitter.flush()).toBeNull();
});

test("blank lines are dropped", () => {
  const splitter = new LineSplitter();
  expect(splitter.push("\n\n{\"x\":1}\n\n")).toEqual(['{"x":1}']);
});

test("records parse as plain objects", () => {
  expect(parseRecord('{"kind":"tap","tick":3}')).toEqual({ kind: "tap", tick: 3 });
});
