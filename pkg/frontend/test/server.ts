// Spawns the real engine for integration tests. Requires the Python
// package to be installed (pip install -e .. --no-build-isolation).

import { type ChildProcess, spawn } from "node:child_process";
import { mkdtempSync, rmSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";

export interface EngineHandle {
  baseUrl: string;
  stop: () => void;
}

export async function startEngine(port: number): Promise<EngineHandle> {
  const workspace = mkdtempSync(join(tmpdir(), "forgeline-console-"));
  const child: ChildProcess = spawn(
    "python3",
    [
      "-m",
      "forgeline.cli",
      "--workspace",
      workspace,
      "--clock",
      "fixed:1700000000",
      "serve",
      "--http",
      `127.0.0.1:${port}`,
    ],
    { stdio: ["ignore", "ignore", "pipe"] },
  );
  const stderr: string[] = [];
  child.stderr?.on("data", (chunk) => stderr.push(String(chunk)));

  const baseUrl = `http://127.0.0.1:${port}`;
  const deadline = Date.now() + 15_000;
  for (;;) {
    try {
      const response = await fetch(`${baseUrl}/rpc`, {
        method: "POST",
        body: JSON.stringify({ id: 1, kind: "request", method: "tools/list", payload: {} }),
      });
      if (response.ok) break;
    } catch {
      // not up yet
    }
    if (Date.now() > deadline) {
      child.kill();
      throw new Error(`engine did not come up: ${stderr.join("")}`);
    }
    await new Promise((resolve) => setTimeout(resolve, 100));
  }
  return {
    baseUrl,
    stop: () => {
      child.kill("SIGTERM");
      rmSync(workspace, { recursive: true, force: true });
    },
  };
}

export function pickPort(): number {
  // ephemeral-range port; collisions surface as bind failures at spawn
  return 18000 + Math.floor(Math.random() * 20_000);
}
