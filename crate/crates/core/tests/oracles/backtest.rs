//! Day-by-day wealth bookkeeping, written independently of the ledger code.

/// One scripted day: the reference row `(gross log return, cost, net, cumulative %)`.
pub type Row = (f64, f64, f64, f64);

/// Tracks wealth multiplicatively: entering multiplies by `1−c`, a held day
/// by `close/prev`, leaving (on the first flat day, or after the last day
/// when still long) by `1−c`.
pub fn scripted(prev_close: f64, closes: &[f64], long: &[bool], c: f64) -> Vec<Row> {
    assert_eq!(closes.len(), long.len());
    let mut wealth = 1.0;
    let mut held = false;
    let mut prev = prev_close;
    let mut out = Vec::new();
    for (i, (&close, &l)) in closes.iter().zip(long).enumerate() {
        let start = wealth;
        let mut fee = 1.0;
        if l != held {
            fee *= 1.0 - c;
        }
        let gross = if l { close / prev } else { 1.0 };
        if l && i + 1 == closes.len() {
            fee *= 1.0 - c;
        }
        wealth *= fee * gross;
        out.push((gross.ln(), fee.ln(), (wealth / start).ln(), (wealth - 1.0) * 100.0));
        held = l;
        prev = close;
    }
    out
}
