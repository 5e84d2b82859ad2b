//! Stacked per-user RB blocks per slice against arrival count, as plain text
//! or SVG.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use slicesim_core::domain::{rbs_for_rate, SliceConfig, SliceKind, UserId};
use slicesim_core::sim::{StepOutcome, StepRecord, CHECKPOINT_EVERY};

/// A slice's allocations at one checkpoint, in admission order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SliceColumn {
    pub kind: SliceKind,
    pub total_rbs: u32,
    pub blocks: Vec<(UserId, u32)>,
}

impl SliceColumn {
    pub fn used(&self) -> u32 {
        self.blocks.iter().map(|b| b.1).sum()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Snapshot {
    pub arrivals: usize,
    pub columns: Vec<SliceColumn>,
}

/// Replays admissions and handover moves to recover who holds which RBs at
/// each checkpoint.
pub fn snapshots(steps: &[StepRecord], configs: &[SliceConfig]) -> Vec<Snapshot> {
    // user -> (slice, rbs, admission order)
    let mut held: BTreeMap<UserId, (SliceKind, u32, usize)> = BTreeMap::new();
    let mut out = Vec::new();
    for (i, s) in steps.iter().enumerate() {
        for m in &s.moves {
            if let (Some(entry), Some(cfg)) = (held.get_mut(&m.user), configs.iter().find(|c| c.kind == m.to)) {
                entry.0 = m.to;
                entry.1 = rbs_for_rate(m.rate, cfg.rb_rate).unwrap_or(entry.1);
            }
        }
        if let StepOutcome::Admitted { slice, rbs, .. } = s.outcome {
            held.insert(s.user, (slice, rbs, i));
        }
        let n = i + 1;
        if n % CHECKPOINT_EVERY == 0 || n == steps.len() {
            let columns = configs
                .iter()
                .map(|c| {
                    let mut blocks: Vec<(usize, UserId, u32)> = held
                        .iter()
                        .filter(|(_, h)| h.0 == c.kind)
                        .map(|(u, h)| (h.2, *u, h.1))
                        .collect();
                    blocks.sort_unstable();
                    SliceColumn {
                        kind: c.kind,
                        total_rbs: c.total_rbs,
                        blocks: blocks.into_iter().map(|(_, u, r)| (u, r)).collect(),
                    }
                })
                .collect();
            out.push(Snapshot { arrivals: n, columns });
        }
    }
    out
}

/// One row per checkpoint; each RB is a character, alternating per user.
pub fn render_text(snaps: &[Snapshot], title: &str) -> String {
    let mut out = format!("{title}\none char per RB, blocks alternate '#'/'=' per user, '.' is free\n\n");
    for snap in snaps {
        let _ = write!(out, "{:>4} |", snap.arrivals);
        for col in &snap.columns {
            let mut bar = String::new();
            for (k, (_, rbs)) in col.blocks.iter().enumerate() {
                let c = if k % 2 == 0 { '#' } else { '=' };
                bar.extend(std::iter::repeat_n(c, *rbs as usize));
            }
            bar.extend(std::iter::repeat_n(
                '.',
                col.total_rbs.saturating_sub(col.used()) as usize,
            ));
            let _ = write!(
                out,
                " {:<5} {bar} {:>3}/{:<3} users={:<3}|",
                col.kind.as_str(),
                col.used(),
                col.total_rbs,
                col.blocks.len()
            );
        }
        out.push('\n');
    }
    out
}

const RB_PX: u32 = 3;
const BAR_W: u32 = 12;
const GROUP_GAP: u32 = 10;
const MARGIN: u32 = 40;

fn block_fill(kind: SliceKind, k: usize) -> &'static str {
    const URLLC: [&str; 4] = ["#1f77b4", "#6baed6", "#08519c", "#9ecae1"];
    const EMBB: [&str; 4] = ["#d62728", "#fc9272", "#a50f15", "#fcbba1"];
    match kind {
        SliceKind::Urllc => URLLC[k % URLLC.len()],
        SliceKind::Embb => EMBB[k % EMBB.len()],
    }
}

/// Side-by-side stacked bars, one pair per checkpoint.
pub fn render_svg(snaps: &[Snapshot], title: &str) -> String {
    let max_rbs = snaps
        .iter()
        .flat_map(|s| s.columns.iter().map(|c| c.total_rbs))
        .max()
        .unwrap_or(1);
    let ncols = snaps.first().map_or(1, |s| s.columns.len()) as u32;
    let group_w = ncols * BAR_W + GROUP_GAP;
    let plot_h = max_rbs * RB_PX;
    let width = 2 * MARGIN + group_w * snaps.len() as u32;
    let height = plot_h + 2 * MARGIN + 20;
    let base = MARGIN + plot_h;
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{MARGIN}" y="20" font-family="sans-serif" font-size="13">{}</text>"#,
        escape(title)
    );
    for (g, snap) in snaps.iter().enumerate() {
        let gx = MARGIN + g as u32 * group_w;
        for (c, col) in snap.columns.iter().enumerate() {
            let x = gx + c as u32 * BAR_W;
            let cap_h = col.total_rbs * RB_PX;
            let _ = writeln!(
                svg,
                r#"<rect x="{x}" y="{}" width="{BAR_W}" height="{cap_h}" fill="none" stroke="gray" stroke-dasharray="2,2"/>"#,
                base - cap_h
            );
            let mut y = base;
            for (k, (user, rbs)) in col.blocks.iter().enumerate() {
                let h = rbs * RB_PX;
                y -= h;
                let _ = writeln!(
                    svg,
                    r#"<rect x="{x}" y="{y}" width="{BAR_W}" height="{h}" fill="{}" stroke="white" stroke-width="0.5"><title>user {user} {} {rbs} RBs</title></rect>"#,
                    block_fill(col.kind, k),
                    col.kind
                );
            }
        }
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" font-family="sans-serif" font-size="9" text-anchor="middle">{}</text>"#,
            gx + ncols * BAR_W / 2,
            base + 14,
            snap.arrivals
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" font-family="sans-serif" font-size="11" text-anchor="middle">arrivals (bars: URLLC left, eMBB right; dashed outline is slice capacity)</text>"#,
        width / 2,
        base + 32
    );
    svg.push_str("</svg>\n");
    svg
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;
    use slicesim_core::domain::Mbps;
    use slicesim_core::planning::Move;

    fn step(i: u64, user: u32, outcome: StepOutcome, moves: Vec<Move>) -> StepRecord {
        StepRecord {
            arrival_index: i,
            user: UserId(user),
            intent_class: "x".into(),
            outcome,
            embb_occ: 0.0,
            urllc_occ: 0.0,
            aggregate_occ: 0.0,
            handovers: moves.len() as u32,
            moves,
            embb_users: 0,
            urllc_users: 0,
            blocked_total: 0,
        }
    }

    #[test]
    fn moves_shift_blocks_between_columns() {
        let admit = |slice, rate| StepOutcome::Admitted {
            slice,
            rate: Mbps(rate),
            rbs: rate,
        };
        let steps = vec![
            step(1, 7, admit(SliceKind::Embb, 5), vec![]),
            step(2, 8, admit(SliceKind::Embb, 12), vec![]),
            step(
                3,
                9,
                StepOutcome::Blocked(slicesim_core::domain::RejectReason::NoFeasiblePlan),
                vec![],
            ),
            step(4, 10, admit(SliceKind::Urllc, 2), vec![]),
            step(
                5,
                11,
                admit(SliceKind::Embb, 15),
                vec![Move {
                    user: UserId(7),
                    from: SliceKind::Embb,
                    to: SliceKind::Urllc,
                    rate: Mbps(5),
                }],
            ),
        ];
        let snaps = snapshots(&steps, &SliceConfig::defaults());
        assert_eq!(snaps.len(), 1);
        let cols = &snaps[0].columns;
        assert_eq!(cols[0].kind, SliceKind::Urllc);
        assert_eq!(cols[0].blocks, [(UserId(7), 5), (UserId(10), 2)]);
        assert_eq!(cols[1].blocks, [(UserId(8), 12), (UserId(11), 15)]);
        let text = render_text(&snaps, "t");
        let urllc_bar = format!("URLLC {}{} ", "#####==", ".".repeat(23));
        assert!(text.contains(&urllc_bar), "{text}");
        assert!(text.contains("  7/30 "));
        let svg = render_svg(&snaps, "t");
        assert_eq!(svg.matches("<title>").count(), 4);
        assert_eq!(svg, render_svg(&snaps, "t"));
    }
}
