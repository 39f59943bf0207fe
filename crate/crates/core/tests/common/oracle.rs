//! Brute-force feature definitions evaluated tick by tick.

use symtune_core::midi::Score;
use symtune_core::FeatureReport;

/// Pitches sounding at every tick.
pub fn tick_sets(s: &Score) -> Vec<u128> {
    let end = s.notes.iter().map(|n| n.onset + n.duration).max().unwrap_or(0);
    let mut sets = vec![0u128; end as usize];
    for t in 0..end {
        for n in &s.notes {
            if n.onset <= t && t < n.onset + n.duration {
                sets[t as usize] |= 1 << n.pitch;
            }
        }
    }
    sets
}

fn scales() -> Vec<[bool; 12]> {
    let steps_major = [2, 2, 1, 2, 2, 2, 1];
    let steps_minor = [2, 1, 2, 2, 1, 2, 2];
    let mut out = Vec::new();
    for root in 0..12 {
        for steps in [steps_major, steps_minor] {
            let mut member = [false; 12];
            let mut pc = root;
            for s in steps {
                member[pc % 12] = true;
                pc += s;
            }
            out.push(member);
        }
    }
    out
}

pub fn oracle(s: &Score) -> FeatureReport {
    let tpq = s.ticks_per_quarter as u64;
    let n = s.notes.len();
    let sets = tick_sets(s);

    let mut step_sets: std::collections::BTreeMap<u64, u128> = Default::default();
    for (t, set) in sets.iter().enumerate() {
        if *set != 0 {
            *step_sets.entry(t as u64 * 8 / tpq).or_default() |= set;
        }
    }
    let active = step_sets.len();
    let poly = step_sets.values().filter(|m| m.count_ones() > 1).count();
    let polyphony_rate = if active == 0 { 0.0 } else { poly as f64 / active as f64 };

    let empty_beat_rate = if n == 0 {
        0.0
    } else {
        let first_beat = s.notes.iter().map(|n| n.onset).min().unwrap() / tpq;
        let last_beat = (sets.len() as u64 - 1) / tpq;
        let mut empty = 0;
        for b in first_beat..=last_beat {
            if !s.notes.iter().any(|n| (b * tpq..(b + 1) * tpq).contains(&n.onset)) {
                empty += 1;
            }
        }
        empty as f64 / (last_beat - first_beat + 1) as f64
    };

    let mut pitch_histogram = vec![0u32; 128];
    let mut velocity_histogram = vec![0u32; 20];
    for note in &s.notes {
        pitch_histogram[note.pitch as usize] += 1;
        let v = note.velocity as u32 - 1;
        let bin = (0..20u32).find(|b| *b == 19 || v * 20 < (b + 1) * 127).unwrap();
        velocity_histogram[bin as usize] += 1;
    }
    let range = |mut xs: Vec<u8>| -> u32 {
        xs.sort();
        match (xs.first(), xs.last()) {
            (Some(a), Some(b)) => (b - a) as u32,
            _ => 0,
        }
    };
    let scale_consistency = if n == 0 {
        1.0
    } else {
        let best = scales()
            .iter()
            .map(|m| s.notes.iter().filter(|x| m[(x.pitch % 12) as usize]).count())
            .max()
            .unwrap();
        best as f64 / n as f64
    };
    FeatureReport {
        n_notes: n,
        polyphony_rate,
        empty_beat_rate,
        pitch_histogram,
        pitch_range: range(s.notes.iter().map(|x| x.pitch).collect()),
        scale_consistency,
        velocity_histogram,
        velocity_range: range(s.notes.iter().map(|x| x.velocity).collect()),
    }
}

pub fn roll_oracle(s: &Score) -> Vec<bool> {
    let tpq = s.ticks_per_quarter as u64;
    let mut cells = vec![false; 128 * 64];
    for (t, set) in tick_sets(s).iter().enumerate() {
        let c = t as u64 * 4 / tpq;
        if c >= 64 {
            break;
        }
        for p in 0..128 {
            if set >> p & 1 == 1 {
                cells[p * 64 + c as usize] = true;
            }
        }
    }
    cells
}

