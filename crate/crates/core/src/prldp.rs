//! Per-record local DP, run as an in-process two-round protocol.
//!
//! Round 1: every party (including those holding ⊥) sends one noisy
//! indicator per privacy-specified domain; the analyzer sums the columns,
//! thresholds them at `sqrt(8n) ln(L/beta) / floor_i` and picks `eps_tau`.
//! Round 2 (framework only): parties with `E(r) >= eps_tau` run an LDP
//! mechanism on their record at `eps_tau/2`; the rest run it on ⊥.

use rayon::prelude::*;
use serde::Serialize;

use crate::budget::BudgetFunction;
use crate::count::{select_and_aggregate, stable_sum, CountRun};
use crate::error::{PrdpError, Result};
use crate::noise::{check_beta, NoiseSource, StreamFamily};
use crate::partition::DomainPartition;
use crate::query::Query;
use crate::record::Record;

/// Parties simulated per rayon task. Fixed so column sums are reduced in
/// the same order regardless of thread count.
const PARTY_CHUNK: usize = 4096;

/// Round-1 response: one noisy indicator per domain.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Round1Response {
    pub party: u32,
    pub values: Vec<f64>,
}

/// Round-2 response. `bot` records whether the party answered as ⊥; the
/// curator's aggregation reads only `payload`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Round2Response {
    pub party: u32,
    pub bot: bool,
    pub payload: f64,
}

/// Both rounds of one party's messages.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LocalResponse {
    pub round1: Round1Response,
    pub round2: Option<Round2Response>,
}

fn take<'a>(bytes: &mut &'a [u8], n: usize) -> Result<&'a [u8]> {
    if bytes.len() < n {
        return Err(PrdpError::Wire(format!("truncated: need {n} bytes, have {}", bytes.len())));
    }
    let (head, tail) = bytes.split_at(n);
    *bytes = tail;
    Ok(head)
}

fn read_u32(bytes: &mut &[u8]) -> Result<u32> {
    Ok(u32::from_le_bytes(take(bytes, 4)?.try_into().expect("4 bytes")))
}

fn read_f64(bytes: &mut &[u8]) -> Result<f64> {
    Ok(f64::from_le_bytes(take(bytes, 8)?.try_into().expect("8 bytes")))
}

impl Round1Response {
    /// Little-endian: `u32 party, u32 L, L x f64`.
    pub fn encode(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.party.to_le_bytes());
        out.extend_from_slice(&(self.values.len() as u32).to_le_bytes());
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }

    /// Decode one frame, advancing `bytes` past it.
    pub fn decode(bytes: &mut &[u8]) -> Result<Self> {
        let party = read_u32(bytes)?;
        let l = read_u32(bytes)? as usize;
        let values = (0..l).map(|_| read_f64(bytes)).collect::<Result<_>>()?;
        Ok(Round1Response { party, values })
    }
}

impl Round2Response {
    /// Little-endian: `u32 party, u8 bot, f64 payload`.
    pub fn encode(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.party.to_le_bytes());
        out.push(u8::from(self.bot));
        out.extend_from_slice(&self.payload.to_le_bytes());
    }

    pub fn decode(bytes: &mut &[u8]) -> Result<Self> {
        let party = read_u32(bytes)?;
        let bot = match take(bytes, 1)?[0] {
            0 => false,
            1 => true,
            b => return Err(PrdpError::Wire(format!("bad bot flag {b}"))),
        };
        let payload = read_f64(bytes)?;
        Ok(Round2Response { party, bot, payload })
    }
}

/// Decode a concatenation of round-1 frames.
pub fn decode_round1_stream(mut bytes: &[u8]) -> Result<Vec<Round1Response>> {
    let mut out = Vec::new();
    while !bytes.is_empty() {
        out.push(Round1Response::decode(&mut bytes)?);
    }
    Ok(out)
}

/// Decode a concatenation of round-2 frames.
pub fn decode_round2_stream(mut bytes: &[u8]) -> Result<Vec<Round2Response>> {
    let mut out = Vec::new();
    while !bytes.is_empty() {
        out.push(Round2Response::decode(&mut bytes)?);
    }
    Ok(out)
}

/// Round-1 randomizer for a real record: indicator of its domain plus
/// `Lap(1/floor_i)` in every coordinate.
pub fn prldp_randomizer(budget: &BudgetFunction, r: &Record, noise: &mut NoiseSource) -> Result<Vec<f64>> {
    let d = budget.domain_of(r)?;
    let mut out = prldp_randomizer_bot(budget, noise);
    out[d - 1] += 1.0;
    Ok(out)
}

/// Round-1 randomizer for ⊥: pure noise, no record involved.
pub fn prldp_randomizer_bot(budget: &BudgetFunction, noise: &mut NoiseSource) -> Vec<f64> {
    let p = budget.partition();
    (1..=p.len())
        .map(|i| noise.laplace_unchecked(1.0 / p.floor(i)))
        .collect()
}

/// `sqrt(8n) ln(L/beta) / floor_i` for every domain.
pub fn prldp_thresholds(partition: &DomainPartition, n: usize, beta: f64) -> Result<Vec<f64>> {
    check_beta(beta)?;
    let factor = (8.0 * n as f64).sqrt() * (partition.len() as f64 / beta).ln();
    Ok((1..=partition.len()).map(|i| factor / partition.floor(i)).collect())
}

/// Analyzer over known column sums from `n` parties.
pub fn analyze_column_sums(
    partition: &DomainPartition,
    column_sums: Vec<f64>,
    n: usize,
    beta: f64,
) -> Result<CountRun> {
    if n == 0 {
        return Err(PrdpError::TooFewRecords {
            mechanism: "prldp-analyzer".into(),
            required: 1,
            got: 0,
        });
    }
    let thresholds = prldp_thresholds(partition, n, beta)?;
    let sel = select_and_aggregate(partition, &column_sums, &thresholds)?;
    Ok(CountRun {
        noisy_counts: column_sums,
        thresholds,
        ell: sel.ell,
        eps_tau: sel.eps_tau,
        estimate: sel.estimate,
    })
}

/// Analyzer over the full `n x L` response matrix. Pure.
pub fn prldp_analyzer(partition: &DomainPartition, responses: &[Vec<f64>], beta: f64) -> Result<CountRun> {
    let l = partition.len();
    if let Some(bad) = responses.iter().find(|row| row.len() != l) {
        return Err(PrdpError::DimensionMismatch { expected: l, got: bad.len() });
    }
    let sums = (0..l)
        .map(|i| stable_sum(responses.iter().map(|row| &row[i])))
        .collect();
    analyze_column_sums(partition, sums, responses.len(), beta)
}

/// Column sums of all parties' round-1 responses, simulated in parallel
/// with party `j` drawing from `family.stream(j)`.
fn simulate_round1(records: &[Record], budget: &BudgetFunction, family: StreamFamily) -> Result<Vec<f64>> {
    let l = budget.domain_count();
    let partials = records
        .par_chunks(PARTY_CHUNK)
        .enumerate()
        .map(|(c, chunk)| {
            let mut sums = vec![0.0f64; l];
            let mut comp = vec![0.0f64; l];
            for (k, r) in chunk.iter().enumerate() {
                let mut ns = family.stream((c * PARTY_CHUNK + k) as u64);
                let row = prldp_randomizer(budget, r, &mut ns)?;
                for i in 0..l {
                    // Neumaier step per column
                    let t = sums[i] + row[i];
                    if sums[i].abs() >= row[i].abs() {
                        comp[i] += (sums[i] - t) + row[i];
                    } else {
                        comp[i] += (row[i] - t) + sums[i];
                    }
                    sums[i] = t;
                }
            }
            Ok(sums.iter().zip(&comp).map(|(s, c)| s + c).collect::<Vec<f64>>())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((0..l)
        .map(|i| stable_sum(partials.iter().map(|p| &p[i])))
        .collect())
}

/// Local-model count: round 1 alone under the full budget function.
pub fn prldp_count(
    records: &[Record],
    budget: &BudgetFunction,
    beta: f64,
    noise: &mut NoiseSource,
) -> Result<CountRun> {
    check_beta(beta)?;
    let sums = simulate_round1(records, budget, noise.family())?;
    analyze_column_sums(budget.partition(), sums, records.len(), beta)
}

/// An ε-LDP mechanism: a local randomizer and a curator-side aggregate.
pub trait LdpMechanism: Send + Sync {
    fn name(&self) -> &'static str;

    fn query(&self) -> Query;

    fn local(&self, r: &Record, eps: f64, noise: &mut NoiseSource) -> Result<f64>;

    /// Local randomizer on ⊥. Takes no record.
    fn local_bot(&self, eps: f64, noise: &mut NoiseSource) -> Result<f64>;

    fn aggregate(&self, payloads: &[f64], beta: f64) -> Result<f64>;
}

fn check_eps(eps: f64) -> Result<()> {
    if eps > 0.0 && eps.is_finite() {
        Ok(())
    } else {
        Err(PrdpError::InvalidParameter(format!("local budget must be positive, got {eps}")))
    }
}

/// `1 + Lap(1/eps)` per real record, `Lap(1/eps)` for ⊥; summed.
#[derive(Debug, Clone, Copy, Default)]
pub struct LdpCount;

impl LdpMechanism for LdpCount {
    fn name(&self) -> &'static str {
        "ldp-count"
    }

    fn query(&self) -> Query {
        Query::Count
    }

    fn local(&self, _r: &Record, eps: f64, noise: &mut NoiseSource) -> Result<f64> {
        Ok(1.0 + self.local_bot(eps, noise)?)
    }

    fn local_bot(&self, eps: f64, noise: &mut NoiseSource) -> Result<f64> {
        check_eps(eps)?;
        Ok(noise.laplace_unchecked(1.0 / eps))
    }

    fn aggregate(&self, payloads: &[f64], _beta: f64) -> Result<f64> {
        Ok(stable_sum(payloads))
    }
}

/// Clipped-Laplace sum: `min(v, tau) + Lap(tau/eps)` with
/// `tau = monotone_inverse(eps)` (at least 1); ⊥ reports `v = 0`.
#[derive(Debug, Clone)]
pub struct LdpClippedSum {
    budget: BudgetFunction,
}

impl LdpClippedSum {
    /// Needs a monotone builtin budget.
    pub fn new(budget: &BudgetFunction) -> Result<Self> {
        if !budget.is_monotone() {
            return Err(PrdpError::Unsupported {
                method: "ldp-sum".into(),
                query: "custom budget without an inverse".into(),
            });
        }
        Ok(LdpClippedSum { budget: budget.clone() })
    }

    pub fn clip(&self, eps: f64) -> u64 {
        self.budget.monotone_inverse(eps).unwrap_or(0).max(1)
    }

    fn randomize(&self, v: u64, eps: f64, noise: &mut NoiseSource) -> Result<f64> {
        check_eps(eps)?;
        let tau = self.clip(eps);
        Ok(v.min(tau) as f64 + noise.laplace_unchecked(tau as f64 / eps))
    }
}

impl LdpMechanism for LdpClippedSum {
    fn name(&self) -> &'static str {
        "ldp-sum"
    }

    fn query(&self) -> Query {
        Query::Sum
    }

    fn local(&self, r: &Record, eps: f64, noise: &mut NoiseSource) -> Result<f64> {
        self.randomize(r.value(), eps, noise)
    }

    fn local_bot(&self, eps: f64, noise: &mut NoiseSource) -> Result<f64> {
        self.randomize(0, eps, noise)
    }

    fn aggregate(&self, payloads: &[f64], _beta: f64) -> Result<f64> {
        Ok(stable_sum(payloads))
    }
}

/// Reports the exact contribution. NOT private; for tests.
#[derive(Debug, Clone, Copy)]
pub struct LdpExactStub(pub Query);

impl LdpMechanism for LdpExactStub {
    fn name(&self) -> &'static str {
        "exact-stub"
    }

    fn query(&self) -> Query {
        self.0
    }

    fn local(&self, r: &Record, _eps: f64, _noise: &mut NoiseSource) -> Result<f64> {
        match self.0 {
            Query::Count => Ok(1.0),
            Query::Sum | Query::Max => Ok(r.value() as f64),
            Query::Distinct => Err(PrdpError::Unsupported {
                method: "prldp".into(),
                query: "distinct".into(),
            }),
        }
    }

    fn local_bot(&self, _eps: f64, _noise: &mut NoiseSource) -> Result<f64> {
        Ok(0.0)
    }

    fn aggregate(&self, payloads: &[f64], _beta: f64) -> Result<f64> {
        Ok(match self.0 {
            Query::Max => payloads.iter().copied().fold(0.0, f64::max),
            _ => stable_sum(payloads),
        })
    }
}

/// Trace of one two-round run.
#[derive(Debug, Clone, Serialize)]
pub struct PrldpRun {
    /// Round-1 analyzer trace under the halved budget function.
    pub round1: CountRun,
    pub ell: usize,
    /// Floor of domain `ell` under the original budget function.
    pub eps_tau: f64,
    /// Parties that answered round 2 with their record.
    pub participants: usize,
    pub estimate: f64,
}

/// Round-2 response of party `party`.
pub fn round2_response(
    party: u32,
    r: &Record,
    budget: &BudgetFunction,
    eps_tau: f64,
    mechanism: &dyn LdpMechanism,
    noise: &mut NoiseSource,
) -> Result<Round2Response> {
    let eps = eps_tau / 2.0;
    let (bot, payload) = if budget.evaluate(r)? >= eps_tau {
        (false, mechanism.local(r, eps, noise)?)
    } else {
        (true, mechanism.local_bot(eps, noise)?)
    };
    Ok(Round2Response { party, bot, payload })
}

/// Two-round local-model framework.
pub fn prldp_framework_run(
    records: &[Record],
    budget: &BudgetFunction,
    beta: f64,
    mechanism: &dyn LdpMechanism,
    noise: &mut NoiseSource,
) -> Result<PrldpRun> {
    check_beta(beta)?;
    let halved = budget.halved();
    let sums = simulate_round1(records, &halved, noise.family())?;
    let round1 = analyze_column_sums(halved.partition(), sums, records.len(), beta / 2.0)?;
    let ell = round1.ell;
    let eps_tau = budget.partition().floor(ell);

    let family = noise.family();
    let responses = records
        .par_iter()
        .enumerate()
        .map(|(j, r)| {
            let mut ns = family.stream(j as u64);
            round2_response(j as u32, r, budget, eps_tau, mechanism, &mut ns)
        })
        .collect::<Result<Vec<_>>>()?;
    let participants = responses.iter().filter(|r| !r.bot).count();
    let payloads: Vec<f64> = responses.iter().map(|r| r.payload).collect();
    let estimate = mechanism.aggregate(&payloads, beta / 2.0)?;
    Ok(PrldpRun { round1, ell, eps_tau, participants, estimate })
}

pub fn prldp_framework(
    records: &[Record],
    budget: &BudgetFunction,
    beta: f64,
    mechanism: &dyn LdpMechanism,
    noise: &mut NoiseSource,
) -> Result<f64> {
    Ok(prldp_framework_run(records, budget, beta, mechanism, noise)?.estimate)
}

/// The local-model mechanism used for `query`; distinct has none.
pub fn standard_ldp_mechanism(query: Query, budget: &BudgetFunction) -> Result<Box<dyn LdpMechanism>> {
    match query {
        Query::Count => Ok(Box::new(LdpCount)),
        Query::Sum => Ok(Box::new(LdpClippedSum::new(budget)?)),
        Query::Max | Query::Distinct => Err(PrdpError::Unsupported {
            method: "prldp-framework".into(),
            query: query.to_string(),
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::record::Dataset;

    fn small() -> BudgetFunction {
        // L = 5
        BudgetFunction::inverse(32.0, 32, 32.0).unwrap()
    }

    #[test]
    fn small_partition_has_five_domains() {
        assert_eq!(small().domain_count(), 5);
    }

    #[test]
    fn bot_zero_noise_is_all_zero() {
        let b = small();
        assert_eq!(prldp_randomizer_bot(&b, &mut NoiseSource::zero()), vec![0.0; 5]);
    }

    #[test]
    fn record_in_domain_three() {
        let b = small();
        // E(v) = 32/v; domain 3 of floors 1,2,4,8,16 is (4, 8], so v = 6.
        let r = Record::scalar(6);
        assert_eq!(b.domain_of(&r).unwrap(), 3);
        assert_eq!(
            prldp_randomizer(&b, &r, &mut NoiseSource::zero()).unwrap(),
            vec![0.0, 0.0, 1.0, 0.0, 0.0]
        );
    }

    #[test]
    fn randomizer_means() {
        let b = small();
        let r = Record::scalar(6);
        let fam = StreamFamily::seeded(3);
        let mut sums = [0.0; 5];
        for j in 0..10_000 {
            let row = prldp_randomizer(&b, &r, &mut fam.stream(j)).unwrap();
            for i in 0..5 {
                sums[i] += row[i];
            }
        }
        for (i, s) in sums.iter().enumerate() {
            let want = if i == 2 { 1.0 } else { 0.0 };
            assert!((s / 10_000.0 - want).abs() < 0.05, "coordinate {i}: {}", s / 10_000.0);
        }
    }

    #[test]
    fn threshold_factor_for_four_parties() {
        let b = small();
        let t = prldp_thresholds(b.partition(), 4, 0.1).unwrap();
        let base = (1.0 / b.eps_min()) * (5.0f64 / 0.1).ln();
        assert!((t[0] / base - 5.656_854_249_492_381).abs() < 1e-12);
    }

    #[test]
    fn analyzer_rejects_ragged_and_empty() {
        let b = small();
        let rows = vec![vec![0.0; 5], vec![0.0; 4]];
        assert!(matches!(
            prldp_analyzer(b.partition(), &rows, 0.1),
            Err(PrdpError::DimensionMismatch { expected: 5, got: 4 })
        ));
        assert!(prldp_analyzer(b.partition(), &[], 0.1).is_err());
    }

    #[test]
    fn analyzer_zero_noise_single_domain() {
        let b = BudgetFunction::inverse(1e4, 1_000_000, 100.0).unwrap();
        let r = Record::scalar(1);
        let i_star = b.domain_of(&r).unwrap();
        let rows: Vec<Vec<f64>> = (0..5000)
            .map(|_| prldp_randomizer(&b, &r, &mut NoiseSource::zero()).unwrap())
            .collect();
        let t = prldp_thresholds(b.partition(), 5000, 0.1).unwrap();
        assert!(5000.0 >= t[i_star - 1]);
        let run = prldp_analyzer(b.partition(), &rows, 0.1).unwrap();
        assert_eq!(run.ell, i_star);
        assert_eq!(run.estimate, 5000.0);
        assert_eq!(prldp_analyzer(b.partition(), &rows, 0.1).unwrap().estimate, run.estimate);
    }

    #[test]
    fn simulated_matches_matrix() {
        let b = small();
        let recs: Vec<Record> = (0..10_000u64).map(|k| Record::scalar(k % 33)).collect();
        let fam = StreamFamily::seeded(8);
        let rows: Vec<Vec<f64>> = recs
            .iter()
            .enumerate()
            .map(|(j, r)| prldp_randomizer(&b, r, &mut fam.stream(j as u64)).unwrap())
            .collect();
        let direct = prldp_analyzer(b.partition(), &rows, 0.1).unwrap();
        let sums = simulate_round1(&recs, &b, fam).unwrap();
        let sim = analyze_column_sums(b.partition(), sums, recs.len(), 0.1).unwrap();
        assert_eq!(direct.ell, sim.ell);
        for (a, c) in direct.noisy_counts.iter().zip(&sim.noisy_counts) {
            assert!((a - c).abs() <= 1e-9 * a.abs().max(1.0));
        }
    }

    #[test]
    fn exact_stub_zero_noise_top_budget() {
        let b = BudgetFunction::inverse(1e4, 1_000_000, 100.0).unwrap();
        let d = Dataset::from_values((0..20_000u64).map(|k| 1 + k % 100), b.bound()).unwrap();
        for q in [Query::Count, Query::Sum, Query::Max] {
            let run = prldp_framework_run(d.records(), &b, 0.1, &LdpExactStub(q), &mut NoiseSource::zero()).unwrap();
            assert_eq!(run.estimate, q.evaluate(&d), "{q}");
            assert_eq!(run.participants, d.len());
        }
    }

    #[test]
    fn excluded_party_looks_like_bot() {
        let b = BudgetFunction::inverse(1e4, 1_000_000, 100.0).unwrap();
        let mech = LdpClippedSum::new(&b).unwrap();
        let low = Record::scalar(900_000);
        let eps_tau = b.partition().floor(b.domain_count());
        assert!(b.evaluate(&low).unwrap() < eps_tau);
        let fam = StreamFamily::seeded(21);
        for j in 0..100 {
            let resp = round2_response(j, &low, &b, eps_tau, &mech, &mut fam.stream(j as u64)).unwrap();
            let bot = mech.local_bot(eps_tau / 2.0, &mut fam.stream(j as u64)).unwrap();
            assert!(resp.bot);
            assert_eq!(resp.payload.to_bits(), bot.to_bits());
        }
    }

    #[test]
    fn clipped_sum_examples() {
        let b = BudgetFunction::inverse(1e4, 1_000_000, 100.0).unwrap();
        let mech = LdpClippedSum::new(&b).unwrap();
        let tau = mech.clip(1.0);
        assert_eq!(tau, 10_000);
        let r = Record::scalar(tau);
        assert_eq!(mech.local(&r, 1.0, &mut NoiseSource::zero()).unwrap(), tau as f64);

        let fam = StreamFamily::seeded(5);
        let mean = (0..10_000)
            .map(|j| mech.local_bot(1.0, &mut fam.stream(j)).unwrap())
            .sum::<f64>()
            / 10_000.0;
        // sd of the mean is sqrt(2) tau / 100
        assert!(mean.abs() < 4.0 * 2f64.sqrt() * tau as f64 / 100.0, "{mean}");

        let n = 10_000usize;
        let hits = (0..100u64)
            .filter(|&t| {
                let fam = StreamFamily::seeded(1000 + t);
                let payloads: Vec<f64> = (0..n)
                    .map(|j| mech.local(&Record::scalar(100), 1.0, &mut fam.stream(j as u64)).unwrap())
                    .collect();
                let est = mech.aggregate(&payloads, 0.1).unwrap();
                (est - 1e6).abs() <= 3.0 * (2.0 * n as f64).sqrt() * tau as f64
            })
            .count();
        assert!(hits >= 90, "{hits}");
    }

    #[test]
    fn wire_round_trip() {
        let r1 = Round1Response { party: 7, values: vec![0.5, -1.25, f64::MAX] };
        let r2 = Round2Response { party: 7, bot: true, payload: -3.5 };
        let mut buf = Vec::new();
        r1.encode(&mut buf);
        assert_eq!(buf.len(), 8 + 24);
        r1.encode(&mut buf);
        assert_eq!(decode_round1_stream(&buf).unwrap(), vec![r1.clone(), r1]);
        let mut buf2 = Vec::new();
        r2.encode(&mut buf2);
        assert_eq!(buf2.len(), 13);
        assert_eq!(decode_round2_stream(&buf2).unwrap(), vec![r2]);
        assert!(decode_round2_stream(&buf2[..12]).is_err());
        buf2[4] = 2;
        assert!(decode_round2_stream(&buf2).is_err());
    }

    #[test]
    fn distinct_is_unsupported() {
        let b = small();
        assert!(matches!(
            standard_ldp_mechanism(Query::Distinct, &b),
            Err(PrdpError::Unsupported { .. })
        ));
    }
}
