//! Compressive radio-map construction.
//!
//! Only the critical configurations (at most one element away from the
//! all-base state) are measured. Because the received signal is a sum of
//! per-element terms, any configuration's signal is the base signal plus the
//! per-element differences `δ_{m,n,k} = y(c_{m,k}, n) - y(c_base, n)`.
//!
//! Storage is `N` base signals plus `M·(N_a-1)·N` deltas.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use num_complex::Complex64;

use crate::channel::{Configuration, ElementState};
use crate::error::{Error, Result};

/// `c_{m,k}`: element `m` in state `k` (1-based), every other element in `c₁`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CriticalConfigId {
    pub m: usize,
    pub k: usize,
}

impl CriticalConfigId {
    pub const BASE: CriticalConfigId = CriticalConfigId { m: 0, k: 1 };

    pub fn configuration(self, n_elements: usize) -> Configuration {
        Configuration::all_base(n_elements).with_state(self.m, ElementState::new(self.k - 1))
    }
}

/// The `N_a·M − M + 1` critical configurations: the base first, then
/// `(m, k ≥ 2)` in lexicographic order.
pub fn critical_configurations(
    n_elements: usize,
    n_states: usize,
) -> Vec<(CriticalConfigId, Configuration)> {
    let mut out = Vec::with_capacity(n_states * n_elements - n_elements + 1);
    out.push((CriticalConfigId::BASE, Configuration::all_base(n_elements)));
    for m in 0..n_elements {
        for k in 2..=n_states {
            let id = CriticalConfigId { m, k };
            out.push((id, id.configuration(n_elements)));
        }
    }
    out
}

/// Neumaier-compensated complex accumulator.
#[derive(Debug, Clone, Copy, Default)]
struct CompensatedSum {
    sum: Complex64,
    comp: Complex64,
}

impl CompensatedSum {
    fn new(start: Complex64) -> Self {
        CompensatedSum {
            sum: start,
            comp: Complex64::new(0.0, 0.0),
        }
    }

    fn add(&mut self, v: Complex64) {
        fn step(sum: &mut f64, comp: &mut f64, v: f64) {
            let t = *sum + v;
            if sum.abs() >= v.abs() {
                *comp += (*sum - t) + v;
            } else {
                *comp += (v - t) + *sum;
            }
            *sum = t;
        }
        step(&mut self.sum.re, &mut self.comp.re, v.re);
        step(&mut self.sum.im, &mut self.comp.im, v.im);
    }

    fn value(self) -> Complex64 {
        self.sum + self.comp
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CriticalMeasurements {
    n_elements: usize,
    n_states: usize,
    n_blocks: usize,
    base: Vec<Complex64>,
    // [((m * (n_states - 1)) + (k - 2)) * n_blocks + n]
    deltas: Vec<Complex64>,
    scene_hash: [u8; 32],
    averaging: u32,
}

/// Differences every critical measurement against the base measurement.
///
/// `signal(id, n)` returns the measured complex signal of critical
/// configuration `id` at block `n`; it is queried with
/// [`CriticalConfigId::BASE`] and every `(m, k ≥ 2)`.
pub fn deltas_from_measurements<F>(
    n_elements: usize,
    n_states: usize,
    n_blocks: usize,
    mut signal: F,
) -> Result<CriticalMeasurements>
where
    F: FnMut(CriticalConfigId, usize) -> Option<Complex64>,
{
    let base = (0..n_blocks)
        .map(|n| {
            signal(CriticalConfigId::BASE, n).ok_or(Error::IncompleteMeasurement { m: 0, k: 1, n })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut deltas = Vec::with_capacity(n_elements * (n_states.saturating_sub(1)) * n_blocks);
    for m in 0..n_elements {
        for k in 2..=n_states {
            for (n, &b) in base.iter().enumerate() {
                let y = signal(CriticalConfigId { m, k }, n)
                    .ok_or(Error::IncompleteMeasurement { m, k, n })?;
                deltas.push(y - b);
            }
        }
    }
    Ok(CriticalMeasurements {
        n_elements,
        n_states,
        n_blocks,
        base,
        deltas,
        scene_hash: [0; 32],
        averaging: 1,
    })
}

/// Radio map of one configuration over a subset of blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct RadioMapVector {
    pub cfg: Configuration,
    pub blocks: Vec<usize>,
    pub mu: Vec<f64>,
}

const MAGIC: &[u8; 4] = b"MRCM";
const FORMAT_VERSION: u16 = 1;

impl CriticalMeasurements {
    pub fn with_metadata(mut self, scene_hash: [u8; 32], averaging: u32) -> Self {
        self.scene_hash = scene_hash;
        self.averaging = averaging;
        self
    }

    pub fn n_elements(&self) -> usize {
        self.n_elements
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_blocks(&self) -> usize {
        self.n_blocks
    }

    pub fn scene_hash(&self) -> &[u8; 32] {
        &self.scene_hash
    }

    /// Samples averaged per critical measurement; 0 when loaded from a file.
    pub fn averaging(&self) -> u32 {
        self.averaging
    }

    pub fn base(&self, n: usize) -> Complex64 {
        self.base[n]
    }

    /// Number of stored complex values.
    pub fn stored_values(&self) -> usize {
        self.base.len() + self.deltas.len()
    }

    #[inline]
    fn delta_offset(&self, m: usize, k: usize) -> usize {
        (m * (self.n_states - 1) + (k - 2)) * self.n_blocks
    }

    /// `δ_{m,n,k}`; zero for the base state.
    #[inline]
    pub fn delta(&self, m: usize, s: ElementState, n: usize) -> Complex64 {
        if s.index() == 0 {
            Complex64::new(0.0, 0.0)
        } else {
            self.deltas[self.delta_offset(m, s.index() + 1) + n]
        }
    }

    /// Contiguous deltas of element `m` in state `s` over all blocks.
    pub fn delta_row(&self, m: usize, s: ElementState) -> Option<&[Complex64]> {
        (s.index() > 0).then(|| {
            let o = self.delta_offset(m, s.index() + 1);
            &self.deltas[o..o + self.n_blocks]
        })
    }

    pub fn check_configuration(&self, cfg: &Configuration) -> Result<()> {
        if cfg.len() != self.n_elements {
            return Err(Error::InvalidConfiguration(format!(
                "configuration has {} states, measurements cover {} elements",
                cfg.len(),
                self.n_elements
            )));
        }
        if let Some(s) = cfg.states().iter().find(|s| s.index() >= self.n_states) {
            return Err(Error::InvalidConfiguration(format!("unknown state {s}")));
        }
        Ok(())
    }

    pub fn predict_signal(&self, cfg: &Configuration, n: usize) -> Result<Complex64> {
        self.check_configuration(cfg)?;
        if n >= self.n_blocks {
            return Err(Error::Index {
                what: "block",
                index: n,
                len: self.n_blocks,
            });
        }
        let mut acc = CompensatedSum::new(self.base[n]);
        for (m, &s) in cfg.states().iter().enumerate() {
            if s.index() > 0 {
                acc.add(self.delta(m, s, n));
            }
        }
        Ok(acc.value())
    }

    pub fn predict_rss(&self, cfg: &Configuration, n: usize) -> Result<f64> {
        Ok(self.predict_signal(cfg, n)?.norm_sqr())
    }

    /// Predicted complex signals over `blocks`, in order.
    pub fn predict_signals(&self, cfg: &Configuration, blocks: &[usize]) -> Result<Vec<Complex64>> {
        blocks.iter().map(|&n| self.predict_signal(cfg, n)).collect()
    }

    pub fn radio_map(&self, cfg: &Configuration, blocks: &[usize]) -> Result<RadioMapVector> {
        if blocks.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Domain("block subset must be strictly increasing".into()));
        }
        let mu = blocks
            .iter()
            .map(|&n| self.predict_rss(cfg, n))
            .collect::<Result<Vec<_>>>()?;
        Ok(RadioMapVector {
            cfg: cfg.clone(),
            blocks: blocks.to_vec(),
            mu,
        })
    }

    pub fn full_radio_map(&self, cfg: &Configuration) -> Result<RadioMapVector> {
        let all: Vec<usize> = (0..self.n_blocks).collect();
        self.radio_map(cfg, &all)
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        let u32_of = |v: usize| -> std::io::Result<[u8; 4]> {
            u32::try_from(v)
                .map(u32::to_le_bytes)
                .map_err(|_| std::io::Error::new(std::io::ErrorKind::InvalidInput, "count exceeds u32"))
        };
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&u32_of(self.n_elements)?)?;
        w.write_all(&u32_of(self.n_blocks)?)?;
        w.write_all(&u32_of(self.n_states)?)?;
        for c in self.base.iter().chain(&self.deltas) {
            w.write_all(&c.re.to_le_bytes())?;
            w.write_all(&c.im.to_le_bytes())?;
        }
        w.write_all(&self.scene_hash)
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let fmt_err = |e: std::io::Error| Error::Format(format!("truncated or unreadable: {e}"));
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(fmt_err)?;
        if &magic != MAGIC {
            return Err(Error::Format("bad magic, expected MRCM".into()));
        }
        let mut b2 = [0u8; 2];
        r.read_exact(&mut b2).map_err(fmt_err)?;
        let version = u16::from_le_bytes(b2);
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        let mut read_u32 = || -> Result<usize> {
            let mut b = [0u8; 4];
            r.read_exact(&mut b).map_err(fmt_err)?;
            Ok(u32::from_le_bytes(b) as usize)
        };
        let (n_elements, n_blocks, n_states) = (read_u32()?, read_u32()?, read_u32()?);
        if n_states == 0 {
            return Err(Error::Format("zero states".into()));
        }
        let n_deltas = n_elements
            .checked_mul(n_states - 1)
            .and_then(|v| v.checked_mul(n_blocks))
            .ok_or_else(|| Error::Format("header counts overflow".into()))?;
        let mut read_complex = |count: usize| -> Result<Vec<Complex64>> {
            let mut buf = vec![0u8; count * 16];
            r.read_exact(&mut buf).map_err(fmt_err)?;
            Ok(buf
                .chunks_exact(16)
                .map(|c| {
                    let re = f64::from_le_bytes(c[..8].try_into().expect("8 bytes"));
                    let im = f64::from_le_bytes(c[8..].try_into().expect("8 bytes"));
                    Complex64::new(re, im)
                })
                .collect())
        };
        let base = read_complex(n_blocks)?;
        let deltas = read_complex(n_deltas)?;
        let mut scene_hash = [0u8; 32];
        r.read_exact(&mut scene_hash).map_err(fmt_err)?;
        let mut rest = [0u8; 1];
        if r.read(&mut rest).map_err(fmt_err)? != 0 {
            return Err(Error::Format("trailing bytes after scene hash".into()));
        }
        Ok(CriticalMeasurements {
            n_elements,
            n_states,
            n_blocks,
            base,
            deltas,
            scene_hash,
            averaging: 0,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::with_capacity(14 + 16 * self.stored_values() + 32);
        self.write_to(&mut buf).map_err(|e| Error::io(path, e))?;
        crate::io::write_atomic(path, &buf)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        CriticalMeasurements::read_from(&mut bytes.as_slice())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{Channel, ChannelParams, ReflectivityModel};
    use crate::scene::Scene;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::HashSet;

    fn channel() -> Channel {
        Channel::new(
            Scene::reference(1.0).unwrap(),
            ReflectivityModel::default(),
            ChannelParams::default(),
        )
        .unwrap()
    }

    fn noiseless(ch: &Channel) -> CriticalMeasurements {
        let m = ch.n_elements();
        deltas_from_measurements(m, ch.n_states(), ch.n_blocks(), |id, n| {
            ch.received_signal(&id.configuration(m), n).ok()
        })
        .unwrap()
    }

    #[test]
    fn critical_counts() {
        assert_eq!(critical_configurations(16, 4).len(), 49);
        assert_eq!(critical_configurations(1, 4).len(), 4);
        let small: Vec<String> = critical_configurations(2, 2)
            .into_iter()
            .map(|(_, c)| c.to_digits())
            .collect();
        assert_eq!(small, ["00", "10", "01"]);
    }

    proptest! {
        #[test]
        fn critical_set_is_the_single_deviation_set(m in 1usize..8, na in 1usize..6) {
            let listed: Vec<_> = critical_configurations(m, na).into_iter().map(|(_, c)| c).collect();
            let unique: HashSet<_> = listed.iter().cloned().collect();
            prop_assert_eq!(unique.len(), listed.len());
            prop_assert_eq!(listed.len(), na * m - m + 1);
            for c in &listed {
                prop_assert!(c.states().iter().filter(|s| s.index() > 0).count() <= 1);
            }
        }
    }

    #[test]
    fn base_and_single_deviation_predictions() {
        let ch = channel();
        let cm = noiseless(&ch);
        let base = Configuration::all_base(16);
        for n in [0, 321, 999] {
            assert_eq!(cm.predict_signal(&base, n).unwrap(), cm.base(n));
            assert_eq!(cm.predict_rss(&base, n).unwrap(), cm.base(n).norm_sqr());
            let one = base.with_state(7, ElementState::new(2));
            let expected = cm.base(n) + cm.delta(7, ElementState::new(2), n);
            assert_eq!(cm.predict_signal(&one, n).unwrap(), expected);
        }
    }

    #[test]
    fn deltas_equal_single_term_differences() {
        let ch = channel();
        let cm = noiseless(&ch);
        for (m, n, k) in [(0, 0, 2), (5, 400, 3), (15, 999, 4)] {
            let s = ElementState::new(k - 1);
            let expected = ch.block_term(m, n, s) - ch.block_term(m, n, ElementState::BASE);
            assert!((cm.delta(m, s, n) - expected).norm() <= 1e-12 * ch.received_signal(&Configuration::all_base(16), n).unwrap().norm());
            assert_eq!(cm.delta(m, ElementState::BASE, n), Complex64::new(0.0, 0.0));
        }
    }

    #[test]
    fn block_offset_cancels_in_deltas() {
        let ch = channel();
        let m = ch.n_elements();
        let offset = Complex64::new(3e-3, -1e-3);
        let shifted = deltas_from_measurements(m, 4, ch.n_blocks(), |id, n| {
            let y = ch.received_signal(&id.configuration(m), n).ok()?;
            Some(if n == 10 { y + offset } else { y })
        })
        .unwrap();
        let plain = noiseless(&ch);
        for mm in 0..m {
            for k in 1..4 {
                let s = ElementState::new(k);
                assert!((shifted.delta(mm, s, 10) - plain.delta(mm, s, 10)).norm() < 1e-15);
            }
        }
    }

    #[test]
    fn missing_measurement_is_named() {
        let err = deltas_from_measurements(3, 4, 5, |id, n| {
            (!(id.m == 2 && id.k == 3 && n == 4)).then_some(Complex64::new(1.0, 0.0))
        })
        .unwrap_err();
        assert!(matches!(err, Error::IncompleteMeasurement { m: 2, k: 3, n: 4 }));
    }

    #[test]
    fn prediction_matches_channel_for_random_configurations() {
        let ch = channel();
        let cm = noiseless(&ch);
        let mut r = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..100 {
            let cfg = Configuration::random(16, 4, &mut r);
            let n = r.gen_range(0..1000);
            let direct = ch.received_signal(&cfg, n).unwrap();
            let pred = cm.predict_signal(&cfg, n).unwrap();
            assert!((pred - direct).norm() <= 1e-10 * direct.norm());
            let rss = cm.predict_rss(&cfg, n).unwrap();
            assert!((rss - ch.mean_rss(&cfg, n).unwrap()).abs() <= 1e-10 * rss);
        }
    }

    #[test]
    fn radio_map_subsets_and_structure() {
        let ch = channel();
        let cm = noiseless(&ch);
        let cfg = Configuration::parse_for("0123012301230123", 16).unwrap();
        let single = cm.radio_map(&cfg, &[17]).unwrap();
        assert_eq!(single.mu, vec![cm.predict_rss(&cfg, 17).unwrap()]);
        let full = cm.full_radio_map(&cfg).unwrap();
        assert_eq!(full.mu.len(), 1000);
        let mean = full.mu.iter().sum::<f64>() / 1000.0;
        let var = full.mu.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 1000.0;
        assert!(var > 0.0);
        assert!(cm.radio_map(&cfg, &[3, 3]).is_err());

        let other = Configuration::parse_for("3300221133002211", 16).unwrap();
        let full2 = cm.full_radio_map(&other).unwrap();
        let differing = full.mu.iter().zip(&full2.mu).filter(|(a, b)| a != b).count();
        assert!(differing >= 900);
    }

    #[test]
    fn storage_is_linear_in_elements() {
        let cm = noiseless(&channel());
        assert_eq!(cm.stored_values(), 1000 + 16 * 3 * 1000);
    }

    #[test]
    fn summation_order_does_not_matter() {
        // Same configuration with the element order reversed must predict the
        // same signal when the deltas are reversed too.
        let ch = channel();
        let cm = noiseless(&ch);
        let m = 16;
        let rev = deltas_from_measurements(m, 4, 1000, |id, n| {
            if id.k == 1 {
                Some(cm.base(n))
            } else {
                let s = ElementState::new(id.k - 1);
                Some(cm.base(n) + cm.delta(m - 1 - id.m, s, n))
            }
        })
        .unwrap();
        let mut r = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let cfg = Configuration::random(m, 4, &mut r);
            let rev_cfg = Configuration::new(cfg.states().iter().rev().copied().collect());
            let n = r.gen_range(0..1000);
            let a = cm.predict_signal(&cfg, n).unwrap();
            let b = rev.predict_signal(&rev_cfg, n).unwrap();
            assert!((a - b).norm() <= 1e-12 * a.norm());
        }
    }

    #[test]
    fn binary_round_trip_and_layout() {
        let cm = deltas_from_measurements(2, 3, 4, |id, n| {
            Some(Complex64::new(id.m as f64 + n as f64, id.k as f64 * 0.5))
        })
        .unwrap()
        .with_metadata([7; 32], 16);
        let mut buf = Vec::new();
        cm.write_to(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"MRCM");
        assert_eq!(u16::from_le_bytes([buf[4], buf[5]]), 1);
        assert_eq!(u32::from_le_bytes(buf[6..10].try_into().unwrap()), 2);
        assert_eq!(u32::from_le_bytes(buf[10..14].try_into().unwrap()), 4);
        assert_eq!(u32::from_le_bytes(buf[14..18].try_into().unwrap()), 3);
        assert_eq!(buf.len(), 18 + 16 * (4 + 2 * 2 * 4) + 32);
        // first delta: m=0, k=2, n=0 → (0 + 0, 1.0) - (0, 0.5)
        let off = 18 + 16 * 4;
        assert_eq!(f64::from_le_bytes(buf[off + 8..off + 16].try_into().unwrap()), 0.5);

        let back = CriticalMeasurements::read_from(&mut buf.as_slice()).unwrap();
        assert_eq!(back.scene_hash(), &[7; 32]);
        assert_eq!(back.with_metadata([7; 32], 16), cm);

        buf.truncate(buf.len() - 1);
        assert!(CriticalMeasurements::read_from(&mut buf.as_slice()).is_err());
        let mut bad = Vec::new();
        cm.write_to(&mut bad).unwrap();
        bad[0] = b'X';
        assert!(CriticalMeasurements::read_from(&mut bad.as_slice()).is_err());
    }
}
