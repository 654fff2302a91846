import { defineConfig } from "vitest/config";

export default defineConfig({
  test: {
    include: ["tests/**/*.test.ts"],
    // The backend round-trip test generates a corpus and boots two servers.
    testTimeout: 30000,
    hookTimeout: 180000,
  },
});
