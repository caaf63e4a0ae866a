/**
 * Drives a full scripted episode through the SDK against a locally served
 * environment and checks it field-for-field against the in-process golden
 * trajectory (see fixtures/generate_fixtures.py).
 */
import { type ChildProcess, spawn } from 'node:child_process';
import { readFileSync } from 'node:fs';
import net from 'node:net';
import { dirname, resolve } from 'node:path';
import { fileURLToPath } from 'node:url';
import { afterAll, beforeAll, describe, expect, it } from 'vitest';

import { NotSubmitted, SessionClosed, SwesimClient } from '../src/index.js';
import type { ActionInput, StepResult } from '../src/index.js';

const here = dirname(fileURLToPath(import.meta.url));
const fixtures = resolve(here, 'fixtures');
const repoRoot = resolve(here, '..', '..');

interface GoldenStep {
  thought: string;
  action: ActionInput & { raw: string; args: Record<string, unknown> };
}

interface Golden {
  instance_id: string;
  script: GoldenStep[];
  trajectory: {
    instance_id: string;
    termination: string;
    final_patch: string;
    steps: {
      feedback: { stdout: string; stderr: string; exit_code: number };
      action_class: string;
    }[];
  };
  evaluate: { reward: number; votes: number[]; M: number };
}

const golden: Golden = JSON.parse(readFileSync(resolve(fixtures, 'golden.json'), 'utf-8'));
const workspaceFiles: Record<string, string> = JSON.parse(
  readFileSync(resolve(fixtures, 'workspace.json'), 'utf-8'),
);

async function freePort(): Promise<number> {
  return new Promise((resolvePort, reject) => {
    const server = net.createServer();
    server.listen(0, '127.0.0.1', () => {
      const address = server.address();
      if (address === null || typeof address === 'string') {
        reject(new Error('no port assigned'));
        return;
      }
      const port = address.port;
      server.close(() => resolvePort(port));
    });
    server.on('error', reject);
  });
}

let service: ChildProcess;
let client: SwesimClient;

beforeAll(async () => {
  const port = await freePort();
  service = spawn(
    'python3',
    [
      '-m',
      'swesim.cli',
      'serve',
      '--dataset',
      resolve(fixtures, 'dataset.jsonl'),
      '--backend',
      `mock:${resolve(fixtures, 'mock.jsonl')}`,
      '--bind',
      `127.0.0.1:${port}`,
    ],
    { cwd: repoRoot, stdio: ['ignore', 'pipe', 'pipe'] },
  );
  const stderrChunks: string[] = [];
  service.stderr?.on('data', (chunk) => stderrChunks.push(String(chunk)));

  client = new SwesimClient({ baseUrl: `http://127.0.0.1:${port}`, maxRetries: 0 });
  const deadline = Date.now() + 20_000;
  while (Date.now() < deadline) {
    if (await client.health()) return;
    if (service.exitCode !== null) {
      throw new Error(`service exited early: ${stderrChunks.join('')}`);
    }
    await new Promise((r) => setTimeout(r, 200));
  }
  throw new Error(`service never became healthy: ${stderrChunks.join('')}`);
});

afterAll(() => {
  service?.kill('SIGTERM');
});

describe('SDK parity with the in-process engine', () => {
  it('reproduces the golden trajectory field-for-field and votes M times', async () => {
    const session = await client.createSession({
      instanceId: golden.instance_id,
      workspaceFiles,
    });
    expect(session.instanceId).toBe(golden.instance_id);

    const results: StepResult[] = [];
    for (const step of golden.script) {
      results.push(await session.step(step.thought, step.action));
    }

    expect(results.length).toBe(golden.trajectory.steps.length);
    for (let i = 0; i < results.length; i++) {
      expect(results[i].feedback).toEqual(golden.trajectory.steps[i].feedback);
      expect(results[i].action_class).toBe(golden.trajectory.steps[i].action_class);
    }
    const last = results[results.length - 1];
    expect(last.done).toBe(true);
    expect(last.termination).toBe(golden.trajectory.termination);

    const finalPatch = await session.submit();
    expect(finalPatch).toBe(golden.trajectory.final_patch);

    const evaluation = await session.evaluate(golden.evaluate.M);
    expect(evaluation.votes).toHaveLength(golden.evaluate.M);
    expect(evaluation.votes).toEqual(golden.evaluate.votes);
    expect(evaluation.reward).toBe(golden.evaluate.reward);

    const status = await session.status();
    expect(status.status).toBe('submitted');
    expect(status.turn).toBe(golden.trajectory.steps.length);
  });

  it('guards step-after-submit locally without a request', async () => {
    const session = await client.createSession({
      instanceId: golden.instance_id,
      workspaceFiles,
    });
    await session.submit();
    await expect(session.step('again', { kind: 'bash', raw: 'ls' })).rejects.toBeInstanceOf(
      SessionClosed,
    );
  });

  it('guards evaluate-before-submit locally', async () => {
    const session = await client.createSession({
      instanceId: golden.instance_id,
      workspaceFiles,
    });
    await expect(session.evaluate(1)).rejects.toBeInstanceOf(NotSubmitted);
  });

  it('isolates concurrent sessions', async () => {
    const a = await client.createSession({ instanceId: golden.instance_id, workspaceFiles });
    const b = await client.createSession({ instanceId: golden.instance_id, workspaceFiles });
    await a.step('create', {
      kind: 'editor_create',
      args: { path: 'only_in_a.txt', file_text: 'x\n' },
    });
    const listing = await b.step('list', { kind: 'bash', raw: 'ls' });
    expect(listing.feedback.stdout).not.toContain('only_in_a.txt');
  });
});
