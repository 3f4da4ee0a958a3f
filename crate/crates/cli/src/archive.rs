//! Policy persistence: a versioned binary format with little-endian
//! fixed-width numerics and length-prefixed sections, fingerprinted against
//! the environment it was solved for.
//!
//! Layout: magic `PEGA`, version u32, kind u8 (0 flat / 1 hierarchical),
//! 32-byte environment fingerprint, then sections of `[4-byte tag][u64
//! length][payload]` in a fixed order. Saving is deterministic, so re-saving
//! a loaded archive reproduces it byte for byte.

use std::collections::BTreeMap;
use std::path::Path;

use sha2::{Digest, Sha256};
use thiserror::Error;

use peg_core::abstraction::{compute_topology, JointSuperstate, Partition};
use peg_core::flat_solver::{SolveStats, StagePolicy, ValueTable};
use peg_core::gridworld::{AgentRole, Move, PegEnv};
use peg_core::local_games::LocalSolution;
use peg_core::matrix_game::MixedPolicy;
use peg_core::options::{OptionDef, OptionSet};
use peg_core::simulator::{AggregatedPolicy, HierPolicy};

const MAGIC: &[u8; 4] = b"PEGA";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ArchiveError {
    #[error("cannot access archive {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("not a policy archive (bad magic)")]
    BadMagic,
    #[error("unsupported archive version {0}")]
    BadVersion(u32),
    #[error("archive fingerprint does not match the configured environment")]
    FingerprintMismatch,
    #[error("corrupt archive: {0}")]
    Corrupt(String),
}

/// Environment fingerprint: map text, discount, capture radius, slip and
/// both action sets.
pub fn fingerprint(env: &PegEnv) -> [u8; 32] {
    let mut hasher = Sha256::new();
    hasher.update(b"peg-env-v1\n");
    hasher.update(env.map().to_text().as_bytes());
    hasher.update(env.discount().to_le_bytes());
    hasher.update((env.capture_radius() as u64).to_le_bytes());
    hasher.update(env.slip().to_le_bytes());
    for role in AgentRole::BOTH {
        let moves = env.actions(role).moves();
        hasher.update((moves.len() as u32).to_le_bytes());
        for mv in moves {
            let (tag, dist) = match mv {
                Move::Stay => (0u8, 0u8),
                Move::Step(dir, d) => (1 + *dir as u8, *d),
            };
            hasher.update([tag, dist]);
        }
    }
    hasher.finalize().into()
}

/// A solved flat policy: values plus both stage policies.
#[derive(Debug, Clone)]
pub struct FlatArchive {
    pub values: ValueTable,
    pub pursuer: StagePolicy,
    pub evader: StagePolicy,
}

#[derive(Debug, Clone)]
pub enum Payload {
    Flat(FlatArchive),
    Hier(HierPolicy),
}

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn new() -> Self {
        Writer { buf: Vec::new() }
    }

    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    fn u16(&mut self, v: u16) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn section(&mut self, tag: &[u8; 4], body: impl FnOnce(&mut Writer)) {
        let mut inner = Writer::new();
        body(&mut inner);
        self.buf.extend_from_slice(tag);
        self.u64(inner.buf.len() as u64);
        self.buf.extend_from_slice(&inner.buf);
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], ArchiveError> {
        if self.pos + n > self.buf.len() {
            return Err(ArchiveError::Corrupt("unexpected end of data".into()));
        }
        let slice = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u8(&mut self) -> Result<u8, ArchiveError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, ArchiveError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, ArchiveError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, ArchiveError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, ArchiveError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn len(&mut self, what: &str) -> Result<usize, ArchiveError> {
        let v = self.u64()?;
        usize::try_from(v).map_err(|_| ArchiveError::Corrupt(format!("{what} length overflow")))
    }

    fn section(&mut self, tag: &[u8; 4]) -> Result<Reader<'a>, ArchiveError> {
        let found = self.take(4)?;
        if found != tag {
            return Err(ArchiveError::Corrupt(format!(
                "expected section {:?}, found {:?}",
                String::from_utf8_lossy(tag),
                String::from_utf8_lossy(found)
            )));
        }
        let len = self.len("section")?;
        let body = self.take(len)?;
        Ok(Reader::new(body))
    }

    fn done(&self) -> bool {
        self.pos == self.buf.len()
    }
}

fn write_policy(w: &mut Writer, policy: &[MixedPolicy]) {
    w.u64(policy.len() as u64);
    for p in policy {
        w.u64(p.probs.len() as u64);
        for &x in &p.probs {
            w.f64(x);
        }
    }
}

fn read_policy(r: &mut Reader) -> Result<Vec<MixedPolicy>, ArchiveError> {
    let n = r.len("policy")?;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let k = r.len("distribution")?;
        let mut probs = Vec::with_capacity(k);
        for _ in 0..k {
            probs.push(r.f64()?);
        }
        out.push(MixedPolicy { probs });
    }
    Ok(out)
}

/// Serialize an archive for the given environment.
pub fn encode(env: &PegEnv, payload: &Payload) -> Vec<u8> {
    let mut w = Writer::new();
    w.buf.extend_from_slice(MAGIC);
    w.u32(VERSION);
    w.u8(match payload {
        Payload::Flat(_) => 0,
        Payload::Hier(_) => 1,
    });
    w.buf.extend_from_slice(&fingerprint(env));

    match payload {
        Payload::Flat(flat) => {
            w.section(b"VALS", |w| {
                w.u64(flat.values.values.len() as u64);
                for &v in &flat.values.values {
                    w.f64(v);
                }
            });
            w.section(b"POL1", |w| write_policy(w, &flat.pursuer.per_state));
            w.section(b"POL2", |w| write_policy(w, &flat.evader.per_state));
        }
        Payload::Hier(hier) => {
            w.section(b"PART", |w| {
                w.u64(hier.partition.n_cells() as u64);
                for cell in 0..hier.partition.n_cells() {
                    w.u32(hier.partition.label(cell) as u32);
                }
            });
            w.section(b"OPTS", |w| {
                let total: usize = AgentRole::BOTH
                    .iter()
                    .map(|&a| hier.options.total(a))
                    .sum();
                w.u64(total as u64);
                for agent in AgentRole::BOTH {
                    for option in hier.options.iter(agent) {
                        w.u8(agent.index() as u8);
                        w.u32(option.source as u32);
                        w.u32(option.target as u32);
                        w.u64(option.domain.len() as u64);
                        for (cell, action) in option.domain.iter().zip(&option.policy) {
                            w.u32(*cell as u32);
                            w.u16(*action as u16);
                        }
                    }
                }
            });
            w.section(b"LOCL", |w| {
                w.u64(hier.locals.len() as u64);
                for (gamma, local) in &hier.locals {
                    w.u32(gamma.pursuer_room as u32);
                    w.u32(gamma.evader_room as u32);
                    w.u64(local.states.len() as u64);
                    w.u64(local.n_domain as u64);
                    for &s in &local.states {
                        w.u64(s as u64);
                    }
                    for &v in &local.values.values {
                        w.f64(v);
                    }
                    write_policy(w, &local.pursuer.per_state);
                    write_policy(w, &local.evader.per_state);
                    w.u64(local.stats.iterations as u64);
                    w.f64(local.stats.final_residual);
                    w.u64(local.stats.lp_count);
                    w.u64(local.stats.lp_per_iteration);
                }
            });
            w.section(b"AGGR", |w| {
                let agg = &hier.aggregated;
                w.u64(agg.n_rooms as u64);
                for s in 0..agg.n_rooms * agg.n_rooms {
                    w.f64(agg.values[s]);
                    w.f64(agg.reward[s]);
                    w.u8(agg.terminal[s] as u8);
                }
                write_policy(w, &agg.pursuer);
                write_policy(w, &agg.evader);
            });
        }
    }
    w.buf
}

/// Parse an archive and verify its fingerprint against `env`.
pub fn decode(env: &PegEnv, bytes: &[u8]) -> Result<Payload, ArchiveError> {
    let (kind, mut r) = decode_header(bytes, Some(env))?;
    match kind {
        0 => {
            let mut vals = r.section(b"VALS")?;
            let n = vals.len("values")?;
            if n != env.n_joint_states() {
                return Err(ArchiveError::Corrupt(format!(
                    "value table covers {n} states, environment has {}",
                    env.n_joint_states()
                )));
            }
            let mut values = Vec::with_capacity(n);
            for _ in 0..n {
                values.push(vals.f64()?);
            }
            let pursuer = read_policy(&mut r.section(b"POL1")?)?;
            let evader = read_policy(&mut r.section(b"POL2")?)?;
            if pursuer.len() != n || evader.len() != n {
                return Err(ArchiveError::Corrupt("policy length mismatch".into()));
            }
            Ok(Payload::Flat(FlatArchive {
                values: ValueTable { values },
                pursuer: StagePolicy { per_state: pursuer },
                evader: StagePolicy { per_state: evader },
            }))
        }
        1 => {
            let mut part = r.section(b"PART")?;
            let n_cells = part.len("labels")?;
            if n_cells != env.n_cells() {
                return Err(ArchiveError::Corrupt(format!(
                    "partition covers {n_cells} cells, map has {}",
                    env.n_cells()
                )));
            }
            let mut labels = Vec::with_capacity(n_cells);
            for _ in 0..n_cells {
                labels.push(part.u32()? as i64);
            }
            let partition = Partition::from_labels(labels)
                .map_err(|e| ArchiveError::Corrupt(format!("bad partition: {e}")))?;
            let topology = compute_topology(env, &partition);

            let mut opts = r.section(b"OPTS")?;
            let n_options = opts.len("options")?;
            let mut options = Vec::with_capacity(n_options);
            for _ in 0..n_options {
                let agent = match opts.u8()? {
                    0 => AgentRole::Pursuer,
                    1 => AgentRole::Evader,
                    other => {
                        return Err(ArchiveError::Corrupt(format!("bad agent tag {other}")))
                    }
                };
                let source = opts.u32()? as usize;
                let target = opts.u32()? as usize;
                let n_domain = opts.len("option domain")?;
                let mut domain = Vec::with_capacity(n_domain);
                let mut policy = Vec::with_capacity(n_domain);
                for _ in 0..n_domain {
                    domain.push(opts.u32()? as usize);
                    policy.push(opts.u16()? as usize);
                }
                if source >= partition.superstate_count()
                    || target >= partition.superstate_count()
                {
                    return Err(ArchiveError::Corrupt("option superstate out of range".into()));
                }
                if domain != partition.cells_of(source) {
                    return Err(ArchiveError::Corrupt(
                        "option domain does not match its superstate".into(),
                    ));
                }
                let n_actions = env.actions(agent).len();
                if policy.iter().any(|&a| a >= n_actions) {
                    return Err(ArchiveError::Corrupt("option action out of range".into()));
                }
                let terminal = topology.periphery(agent, source).to_vec();
                options.push(OptionDef {
                    agent,
                    source,
                    target,
                    domain,
                    terminal,
                    policy,
                });
            }
            let options = OptionSet::from_options(partition.superstate_count(), options);

            let mut locl = r.section(b"LOCL")?;
            let n_locals = locl.len("local solutions")?;
            let mut locals = BTreeMap::new();
            for _ in 0..n_locals {
                let gamma = JointSuperstate {
                    pursuer_room: locl.u32()? as usize,
                    evader_room: locl.u32()? as usize,
                };
                let n_states = locl.len("local states")?;
                let n_domain = locl.len("local domain")?;
                if n_domain > n_states {
                    return Err(ArchiveError::Corrupt("local domain exceeds states".into()));
                }
                let mut states = Vec::with_capacity(n_states);
                for _ in 0..n_states {
                    let s = locl.u64()? as usize;
                    if s >= env.n_joint_states() {
                        return Err(ArchiveError::Corrupt("local state out of range".into()));
                    }
                    states.push(s);
                }
                let mut values = Vec::with_capacity(n_states);
                for _ in 0..n_states {
                    values.push(locl.f64()?);
                }
                let pursuer = read_policy(&mut locl)?;
                let evader = read_policy(&mut locl)?;
                if pursuer.len() != n_states || evader.len() != n_states {
                    return Err(ArchiveError::Corrupt("local policy length mismatch".into()));
                }
                let stats = SolveStats {
                    iterations: locl.u64()? as usize,
                    final_residual: locl.f64()?,
                    lp_count: locl.u64()?,
                    lp_per_iteration: locl.u64()?,
                };
                locals.insert(
                    gamma,
                    LocalSolution {
                        superstate: gamma,
                        states,
                        n_domain,
                        values: ValueTable { values },
                        pursuer: StagePolicy { per_state: pursuer },
                        evader: StagePolicy { per_state: evader },
                        stats,
                    },
                );
            }

            let mut aggr = r.section(b"AGGR")?;
            let n_rooms = aggr.len("rooms")?;
            if n_rooms != partition.superstate_count() {
                return Err(ArchiveError::Corrupt(
                    "aggregated room count does not match the partition".into(),
                ));
            }
            let n_states = n_rooms * n_rooms;
            let mut values = Vec::with_capacity(n_states);
            let mut reward = Vec::with_capacity(n_states);
            let mut terminal = Vec::with_capacity(n_states);
            for _ in 0..n_states {
                values.push(aggr.f64()?);
                reward.push(aggr.f64()?);
                terminal.push(aggr.u8()? != 0);
            }
            let pursuer = read_policy(&mut aggr)?;
            let evader = read_policy(&mut aggr)?;
            if pursuer.len() != n_states || evader.len() != n_states {
                return Err(ArchiveError::Corrupt(
                    "aggregated policy length mismatch".into(),
                ));
            }

            Ok(Payload::Hier(HierPolicy {
                partition,
                topology,
                options,
                locals,
                aggregated: AggregatedPolicy {
                    n_rooms,
                    values,
                    reward,
                    terminal,
                    pursuer,
                    evader,
                },
            }))
        }
        other => Err(ArchiveError::Corrupt(format!("unknown payload kind {other}"))),
    }
}

fn decode_header<'a>(
    bytes: &'a [u8],
    env: Option<&PegEnv>,
) -> Result<(u8, Reader<'a>), ArchiveError> {
    let mut r = Reader::new(bytes);
    if r.take(4)? != MAGIC {
        return Err(ArchiveError::BadMagic);
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(ArchiveError::BadVersion(version));
    }
    let kind = r.u8()?;
    let stored: [u8; 32] = r.take(32)?.try_into().unwrap();
    if let Some(env) = env {
        if stored != fingerprint(env) {
            return Err(ArchiveError::FingerprintMismatch);
        }
    }
    Ok((kind, r))
}

pub fn save(path: &Path, env: &PegEnv, payload: &Payload) -> Result<(), ArchiveError> {
    std::fs::write(path, encode(env, payload)).map_err(|source| ArchiveError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load(path: &Path, env: &PegEnv) -> Result<Payload, ArchiveError> {
    let bytes = std::fs::read(path).map_err(|source| ArchiveError::Io {
        path: path.display().to_string(),
        source,
    })?;
    decode(env, &bytes)
}

/// Human-readable dump of an archive, without fingerprint verification.
pub fn inspect(path: &Path) -> Result<String, ArchiveError> {
    let bytes = std::fs::read(path).map_err(|source| ArchiveError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut r = Reader::new(&bytes);
    if r.take(4)? != MAGIC {
        return Err(ArchiveError::BadMagic);
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(ArchiveError::BadVersion(version));
    }
    let kind = r.u8()?;
    let stored = r.take(32)?;
    let mut out = String::new();
    out.push_str(&format!("format      : PEGA v{version}\n"));
    out.push_str(&format!(
        "kind        : {}\n",
        match kind {
            0 => "flat",
            1 => "hier",
            _ => "unknown",
        }
    ));
    out.push_str("fingerprint : ");
    for b in stored {
        out.push_str(&format!("{b:02x}"));
    }
    out.push('\n');

    match kind {
        0 => {
            let mut vals = r.section(b"VALS")?;
            let n = vals.len("values")?;
            out.push_str(&format!("states      : {n}\n"));
            out.push_str("values      :\n");
            for s in 0..n {
                out.push_str(&format!("  {s}: {:.9}\n", vals.f64()?));
            }
            for (tag, name) in [(b"POL1", "pursuer"), (b"POL2", "evader")] {
                let policy = read_policy(&mut r.section(tag)?)?;
                out.push_str(&format!("{name} policy:\n"));
                for (s, p) in policy.iter().enumerate() {
                    out.push_str(&format!("  {s}: {:?}\n", p.probs));
                }
            }
        }
        1 => {
            let mut part = r.section(b"PART")?;
            let n_cells = part.len("labels")?;
            let mut labels = Vec::with_capacity(n_cells);
            for _ in 0..n_cells {
                labels.push(part.u32()?);
            }
            let n_rooms = labels.iter().copied().max().map_or(0, |m| m as usize + 1);
            out.push_str(&format!("cells       : {n_cells}\n"));
            out.push_str(&format!("superstates : {n_rooms}\n"));
            out.push_str(&format!("labels      : {labels:?}\n"));

            let mut opts = r.section(b"OPTS")?;
            let n_options = opts.len("options")?;
            out.push_str(&format!("options     : {n_options}\n"));
            for _ in 0..n_options {
                let agent = if opts.u8()? == 0 { "pursuer" } else { "evader" };
                let source = opts.u32()?;
                let target = opts.u32()?;
                let n_domain = opts.len("domain")?;
                let mut cells = Vec::with_capacity(n_domain);
                for _ in 0..n_domain {
                    let cell = opts.u32()?;
                    let action = opts.u16()?;
                    cells.push((cell, action));
                }
                out.push_str(&format!(
                    "  {agent} {source}->{target}: {} cells, policy {:?}\n",
                    n_domain, cells
                ));
            }

            let mut locl = r.section(b"LOCL")?;
            let n_locals = locl.len("locals")?;
            out.push_str(&format!("local games : {n_locals}\n"));
            for _ in 0..n_locals {
                let g1 = locl.u32()?;
                let g2 = locl.u32()?;
                let n_states = locl.len("states")?;
                let n_domain = locl.len("domain")?;
                let mut states = Vec::with_capacity(n_states);
                for _ in 0..n_states {
                    states.push(locl.u64()?);
                }
                let mut values = Vec::with_capacity(n_states);
                for _ in 0..n_states {
                    values.push(locl.f64()?);
                }
                let _p = read_policy(&mut locl)?;
                let _e = read_policy(&mut locl)?;
                let iterations = locl.u64()?;
                let residual = locl.f64()?;
                let lp_count = locl.u64()?;
                let lp_per_iteration = locl.u64()?;
                let vmin = values.iter().cloned().fold(f64::INFINITY, f64::min);
                let vmax = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                out.push_str(&format!(
                    "  ({g1},{g2}): {n_states} states ({n_domain} interior), values in [{vmin:.6}, {vmax:.6}], {iterations} sweeps, residual {residual:.3e}, {lp_count} matrix games ({lp_per_iteration}/sweep)\n"
                ));
            }

            let mut aggr = r.section(b"AGGR")?;
            let n_rooms = aggr.len("rooms")?;
            out.push_str(&format!("aggregated  : {n_rooms}x{n_rooms} joint superstates\n"));
            for s in 0..n_rooms * n_rooms {
                let value = aggr.f64()?;
                let reward = aggr.f64()?;
                let terminal = aggr.u8()? != 0;
                out.push_str(&format!(
                    "  ({},{}): value {value:.9}, reward {reward:.9}{}\n",
                    s / n_rooms,
                    s % n_rooms,
                    if terminal { ", terminal" } else { "" },
                ));
            }
            for name in ["pursuer", "evader"] {
                let policy = read_policy(&mut aggr)?;
                out.push_str(&format!("aggregated {name} policy:\n"));
                for (s, p) in policy.iter().enumerate() {
                    out.push_str(&format!(
                        "  ({},{}): {:?}\n",
                        s / n_rooms,
                        s % n_rooms,
                        p.probs
                    ));
                }
            }
        }
        other => out.push_str(&format!("unknown payload kind {other}\n")),
    }
    let _ = r.done();
    Ok(out)
}
