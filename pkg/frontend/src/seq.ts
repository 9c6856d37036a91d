/** Request sequencing: the canvas always shows the newest user action.
 * Responses arriving out of order are dropped if a later request has
 * already been displayed. */

export class LatestWins {
  private nextSeq = 0;
  private shownSeq = -1;

  /** Take a sequence number for an outgoing request. */
  issue(): number {
    return this.nextSeq++;
  }

  /** True if a response with this sequence may be displayed. */
  accept(seq: number): boolean {
    if (seq <= this.shownSeq) {
      return false;
    }
    this.shownSeq = seq;
    return true;
  }

  get pending(): boolean {
    return this.nextSeq - 1 > this.shownSeq;
  }
}
