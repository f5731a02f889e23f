import { defineConfig } from "vitest/config";

export default defineConfig({
  test: {
    environment: "node",
    globalSetup: ["test/setup/global.ts"],
    testTimeout: 60000,
    hookTimeout: 240000,
  },
});
