import { defineConfig } from "vitest/config";

export default defineConfig({
  test: {
    include: ["tests/**/*.test.ts"],
    // the live suite boots a real gateway process
    testTimeout: 60_000,
    hookTimeout: 60_000,
  },
});
