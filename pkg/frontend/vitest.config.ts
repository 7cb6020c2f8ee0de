import { defineConfig } from 'vitest/config';

export default defineConfig({
  test: {
    environment: 'node',
    include: ['tests/**/*.test.ts'],
    testTimeout: 60000,
    hookTimeout: 90000,
    // the e2e file spawns one service; keep files sequential
    fileParallelism: false,
  },
});
