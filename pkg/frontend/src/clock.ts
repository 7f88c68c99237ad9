/**
 * Client/server clock mapping. The server stamps every frame with session
 * t_ms; the first frame after the handshake gives a single round-trip
 * offset estimate, refreshed at most once a minute so rendering never
 * jumps mid-cue. Scoring stays server-side, so ±100 ms accuracy is enough.
 */

const REFRESH_MS = 60_000;

export class OffsetClock {
  private offset: number | null = null;
  private lastUpdateLocal = Number.NEGATIVE_INFINITY;

  /** Feed one (server t_ms, local now) observation. */
  observe(serverMs: number, localMs: number): void {
    if (this.offset === null || localMs - this.lastUpdateLocal >= REFRESH_MS) {
      this.offset = serverMs - localMs;
      this.lastUpdateLocal = localMs;
    }
  }

  ready(): boolean {
    return this.offset !== null;
  }

  toServer(localMs: number): number {
    return localMs + (this.offset ?? 0);
  }

  toLocal(serverMs: number): number {
    return serverMs - (this.offset ?? 0);
  }
}
