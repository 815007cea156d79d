import { defineConfig } from "vitest/config";

export default defineConfig({
  test: {
    include: ["tests/**/*.test.ts"],
    environment: "node",
    // parity.test.ts boots the python service; tests there set their own
    // timeouts, the hook timeout covers fixture generation + startup
    hookTimeout: 240_000,
    fileParallelism: false,
  },
});
