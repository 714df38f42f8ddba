/// <reference types="vitest/config" />
import { defineConfig } from "vite";

// The dev server proxies the service's top-level paths so the page can use
// same-origin requests; point EVSCOUT_URL elsewhere if the API is not on 8100.
const target = process.env.EVSCOUT_URL ?? "http://127.0.0.1:8100";
const apiPaths = ["/health", "/patients", "/runs", "/annotations", "/reports", "/jobs"];

export default defineConfig({
  server: {
    port: 5173,
    proxy: Object.fromEntries(
      apiPaths.map((path) => [path, { target, changeOrigin: true }]),
    ),
  },
  test: {
    environment: "node",
    include: ["tests/**/*.test.ts"],
  },
});
