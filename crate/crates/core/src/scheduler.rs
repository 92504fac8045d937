//! Fragment assignment: the cost model, the delay-bound filter, the online
//! greedy rule and its ablation variants, and the offline reference strategy.
//!
//! Costs are simulated ticks. A client may only be handed a fragment whose
//! cost stays within the delay bound `K`; among those the greedy rule picks
//! the fragment merged the fewest times, breaking ties uniformly at random.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{FedError, Result};
use crate::model::FragmentSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientProfile {
    pub id: usize,
    /// Work units per tick.
    pub cmp: f64,
    /// Upload ticks per fragment-size unit.
    pub com_up: f64,
    /// Download ticks per fragment-size unit.
    pub com_down: f64,
    /// Local sample count.
    pub shard_size: usize,
}

impl ClientProfile {
    pub fn new(id: usize, cmp: f64, com_up: f64, com_down: f64, shard_size: usize) -> Result<Self> {
        if !(cmp.is_finite() && cmp > 0.0) {
            return Err(FedError::Config(format!("client {id}: cmp must be positive, got {cmp}")));
        }
        for (name, v) in [("com_up", com_up), ("com_down", com_down)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(FedError::Config(format!(
                    "client {id}: {name} must be nonnegative, got {v}"
                )));
            }
        }
        if shard_size == 0 {
            return Err(FedError::Config(format!("client {id}: shard_size must be at least 1")));
        }
        Ok(ClientProfile {
            id,
            cmp,
            com_up,
            com_down,
            shard_size,
        })
    }

    /// Compute-only profile with unit shard and free communication.
    pub fn compute_only(id: usize, cmp: f64) -> Result<Self> {
        Self::new(id, cmp, 0.0, 0.0, 1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostModel {
    /// `size * shard / cmp + (com_up + com_down) * size`, size in parameters.
    Full,
    /// `size / cmp`, size as a share of the model.
    #[default]
    SizeOverCapability,
}

impl CostModel {
    /// Size of `fragment` in this model's units.
    pub fn fragment_size(self, fragment: &FragmentSpec) -> f64 {
        match self {
            CostModel::Full => fragment.param_count() as f64,
            CostModel::SizeOverCapability => fragment.unit_share,
        }
    }
}

/// Ticks `profile` needs to train a fragment of `fragment_size`.
pub fn cost(profile: &ClientProfile, fragment_size: f64, model: CostModel) -> f64 {
    match model {
        CostModel::Full => {
            fragment_size * profile.shard_size as f64 / profile.cmp
                + (profile.com_up + profile.com_down) * fragment_size
        }
        CostModel::SizeOverCapability => fragment_size / profile.cmp,
    }
}

/// Fragments whose cost for `profile` is at most `k`, in index order.
pub fn feasible_set(profile: &ClientProfile, sizes: &[f64], k: f64, model: CostModel) -> Vec<usize> {
    sizes
        .iter()
        .enumerate()
        .filter(|&(_, &s)| cost(profile, s, model) <= k)
        .map(|(j, _)| j)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Policy {
    /// Least-updated feasible fragment, random tie-break.
    #[default]
    GreRaa,
    /// Uniform over the feasible set.
    Random,
    /// Least-updated fragment overall, ignoring `K`; ties to the lowest index.
    MinPriority,
}

impl Policy {
    pub fn respects_bound(self) -> bool {
        !matches!(self, Policy::MinPriority)
    }
}

/// Mutable assignment state owned by the simulation loop.
#[derive(Debug, Clone)]
pub struct SchedulerState {
    pub policy: Policy,
    pub k: f64,
    pub cost_model: CostModel,
    in_flight: BTreeMap<usize, usize>,
    rng: ChaCha8Rng,
}

impl SchedulerState {
    pub fn new(policy: Policy, k: f64, cost_model: CostModel, seed: u64) -> Result<Self> {
        if !(k > 0.0) {
            return Err(FedError::Config(format!("K must be positive, got {k}")));
        }
        Ok(SchedulerState {
            policy,
            k,
            cost_model,
            in_flight: BTreeMap::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    /// Currently training `(client, fragment)` pairs, by client.
    pub fn in_flight(&self) -> &BTreeMap<usize, usize> {
        &self.in_flight
    }

    /// Assigns a fragment to an idle client with the configured policy.
    pub fn assign(&mut self, profile: &ClientProfile, sizes: &[f64], q: &[u64]) -> Result<usize> {
        match self.policy {
            Policy::GreRaa => gre_raa_assign(self, profile, sizes, q),
            Policy::Random => random_assign(self, profile, sizes),
            Policy::MinPriority => mp_assign(self, profile, q),
        }
    }

    /// Marks `client` idle again.
    pub fn release(&mut self, client: usize) -> Option<usize> {
        self.in_flight.remove(&client)
    }

    fn ensure_idle(&self, client: usize) -> Result<()> {
        match self.in_flight.get(&client) {
            Some(j) => Err(FedError::Contract(format!(
                "client {client} is still training fragment {j}"
            ))),
            None => Ok(()),
        }
    }

    fn feasible_or_err(&self, profile: &ClientProfile, sizes: &[f64]) -> Result<Vec<usize>> {
        let s = feasible_set(profile, sizes, self.k, self.cost_model);
        if s.is_empty() {
            let min_cost = sizes
                .iter()
                .map(|&z| cost(profile, z, self.cost_model))
                .fold(f64::INFINITY, f64::min);
            return Err(FedError::Infeasible {
                client: profile.id,
                k: self.k,
                min_cost,
            });
        }
        Ok(s)
    }
}

pub fn gre_raa_assign(
    state: &mut SchedulerState,
    profile: &ClientProfile,
    sizes: &[f64],
    q: &[u64],
) -> Result<usize> {
    state.ensure_idle(profile.id)?;
    let feasible = state.feasible_or_err(profile, sizes)?;
    let min_q = feasible.iter().map(|&j| q[j]).min().expect("nonempty");
    let ties: Vec<usize> = feasible.into_iter().filter(|&j| q[j] == min_q).collect();
    let chosen = if ties.len() == 1 {
        ties[0]
    } else {
        ties[state.rng.random_range(0..ties.len())]
    };
    assert!(
        cost(profile, sizes[chosen], state.cost_model) <= state.k && q[chosen] == min_q,
        "greedy selection broke its own rule"
    );
    state.in_flight.insert(profile.id, chosen);
    Ok(chosen)
}

pub fn random_assign(state: &mut SchedulerState, profile: &ClientProfile, sizes: &[f64]) -> Result<usize> {
    state.ensure_idle(profile.id)?;
    let feasible = state.feasible_or_err(profile, sizes)?;
    let chosen = feasible[state.rng.random_range(0..feasible.len())];
    state.in_flight.insert(profile.id, chosen);
    Ok(chosen)
}

pub fn mp_assign(state: &mut SchedulerState, profile: &ClientProfile, q: &[u64]) -> Result<usize> {
    state.ensure_idle(profile.id)?;
    let chosen = q
        .iter()
        .enumerate()
        .min_by_key(|&(j, &c)| (c, j))
        .map(|(j, _)| j)
        .ok_or_else(|| FedError::Contract("no fragments to assign".into()))?;
    state.in_flight.insert(profile.id, chosen);
    Ok(chosen)
}

/// Refuses configurations in which some client has no feasible fragment or
/// some fragment is feasible for nobody.
pub fn validate_bound(profiles: &[ClientProfile], sizes: &[f64], k: f64, model: CostModel) -> Result<()> {
    let mut covered = vec![false; sizes.len()];
    for p in profiles {
        let s = feasible_set(p, sizes, k, model);
        if s.is_empty() {
            let min_cost = sizes.iter().map(|&z| cost(p, z, model)).fold(f64::INFINITY, f64::min);
            return Err(FedError::Infeasible {
                client: p.id,
                k,
                min_cost,
            });
        }
        for j in s {
            covered[j] = true;
        }
    }
    if let Some(j) = covered.iter().position(|c| !c) {
        return Err(FedError::Config(format!(
            "fragment {j} is feasible for no client under K = {k}"
        )));
    }
    Ok(())
}

/// Fixed client blocks per fragment and the resulting delay bound.
#[derive(Debug, Clone, PartialEq)]
pub struct OfflineAssignment {
    /// Client ids serving each fragment, indexed by fragment.
    pub blocks: Vec<Vec<usize>>,
    pub k: f64,
}

fn by_capability_desc(profiles: &[ClientProfile]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..profiles.len()).collect();
    order.sort_by(|&a, &b| profiles[b].cmp.total_cmp(&profiles[a].cmp).then(a.cmp(&b)));
    order
}

fn by_size_desc(sizes: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..sizes.len()).collect();
    order.sort_by(|&a, &b| sizes[b].total_cmp(&sizes[a]).then(a.cmp(&b)));
    order
}

/// Sorted offline strategy: the `r`-th largest fragment goes to the `r`-th
/// block of `N / M` clients ranked by capability; leftover clients join the
/// smallest fragment's block. With fewer clients than fragments, client
/// rank `i` cycles through fragment ranks `i, i + N, ...`.
pub fn offline_sorted_assignment(
    profiles: &[ClientProfile],
    sizes: &[f64],
    model: CostModel,
) -> Result<OfflineAssignment> {
    let (n, m) = (profiles.len(), sizes.len());
    if n == 0 || m == 0 {
        return Err(FedError::Config("offline assignment needs clients and fragments".into()));
    }
    let clients = by_capability_desc(profiles);
    let frags = by_size_desc(sizes);
    let mut blocks = vec![Vec::new(); m];
    if n >= m {
        let b = n / m;
        for (rank, &j) in frags.iter().enumerate() {
            let end = if rank + 1 == m { n } else { (rank + 1) * b };
            blocks[j] = clients[rank * b..end].iter().map(|&c| profiles[c].id).collect();
        }
    } else {
        for (rank, &j) in frags.iter().enumerate() {
            blocks[j].push(profiles[clients[rank % n]].id);
        }
    }
    let by_id: BTreeMap<usize, &ClientProfile> = profiles.iter().map(|p| (p.id, p)).collect();
    let k = blocks
        .iter()
        .enumerate()
        .flat_map(|(j, ids)| ids.iter().map(move |id| (j, id)))
        .map(|(j, id)| cost(by_id[id], sizes[j], model))
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(OfflineAssignment { blocks, k })
}

const MAX_BRUTE_CLIENTS: usize = 8;
const MAX_BRUTE_FRAGMENTS: usize = 4;

/// Minimum over fixed assignments of the largest pair cost, where each
/// fragment must receive at least `min_block` clients.
fn brute_force_min_max(
    profiles: &[ClientProfile],
    sizes: &[f64],
    model: CostModel,
    min_block: usize,
) -> Result<f64> {
    let (n, m) = (profiles.len(), sizes.len());
    if n == 0 || m == 0 {
        return Err(FedError::Config("brute force needs clients and fragments".into()));
    }
    if n > MAX_BRUTE_CLIENTS || m > MAX_BRUTE_FRAGMENTS {
        return Err(FedError::TooLarge(format!(
            "N = {n}, M = {m}; limits are N <= {MAX_BRUTE_CLIENTS}, M <= {MAX_BRUTE_FRAGMENTS}"
        )));
    }
    if n < m {
        return Err(FedError::Config(format!(
            "brute force needs N >= M, got N = {n}, M = {m}"
        )));
    }
    let costs: Vec<Vec<f64>> = profiles
        .iter()
        .map(|p| sizes.iter().map(|&s| cost(p, s, model)).collect())
        .collect();
    let total = m.pow(n as u32);
    let mut best = f64::INFINITY;
    let mut digits = vec![0usize; n];
    let mut counts = vec![0usize; m];
    for code in 0..total {
        let mut c = code;
        for d in digits.iter_mut() {
            *d = c % m;
            c /= m;
        }
        counts.fill(0);
        for &d in &digits {
            counts[d] += 1;
        }
        if counts.iter().any(|&k| k < min_block) {
            continue;
        }
        let worst = digits
            .iter()
            .enumerate()
            .map(|(i, &j)| costs[i][j])
            .fold(f64::NEG_INFINITY, f64::max);
        if worst < best {
            best = worst;
        }
    }
    Ok(best)
}

/// Best delay bound over all fixed-block offline strategies: every client
/// serves one fragment and every fragment is served by at least `N / M`
/// clients. Exhaustive; limited to `N <= 8`, `M <= 4`, `N >= M`.
pub fn brute_force_offline_k(profiles: &[ClientProfile], sizes: &[f64], model: CostModel) -> Result<f64> {
    let min_block = profiles.len() / sizes.len().max(1);
    brute_force_min_max(profiles, sizes, model, min_block.max(1))
}

/// Like [`brute_force_offline_k`] but only requires every fragment to be
/// served by someone. Can be strictly below the fixed-block optimum.
pub fn brute_force_covering_k(profiles: &[ClientProfile], sizes: &[f64], model: CostModel) -> Result<f64> {
    brute_force_min_max(profiles, sizes, model, 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn caps(c: &[f64]) -> Vec<ClientProfile> {
        c.iter()
            .enumerate()
            .map(|(i, &x)| ClientProfile::compute_only(i, x).unwrap())
            .collect()
    }

    #[test]
    fn cost_formulas() {
        let p = ClientProfile::new(0, 3.0, 0.0, 0.0, 1).unwrap();
        assert_eq!(cost(&p, 6.0, CostModel::Full), 2.0);
        let q = ClientProfile::compute_only(1, 4.0).unwrap();
        assert_eq!(cost(&q, 0.6, CostModel::SizeOverCapability), 0.15);
        let slow = ClientProfile::new(2, 2.0, 0.0, 0.0, 5).unwrap();
        let fast = ClientProfile::new(3, 4.0, 0.0, 0.0, 5).unwrap();
        assert_eq!(cost(&slow, 7.0, CostModel::Full), 2.0 * cost(&fast, 7.0, CostModel::Full));
        let comm = ClientProfile::new(4, 2.0, 0.5, 0.25, 4).unwrap();
        assert_eq!(cost(&comm, 2.0, CostModel::Full), 4.0 + 1.5);
    }

    #[test]
    fn profile_validation() {
        assert!(ClientProfile::new(0, 0.0, 0.0, 0.0, 1).is_err());
        assert!(ClientProfile::new(0, 1.0, -1.0, 0.0, 1).is_err());
        assert!(ClientProfile::new(0, 1.0, 0.0, 0.0, 0).is_err());
    }

    #[test]
    fn threshold_filter() {
        // cmp 1 so cost equals size
        let p = ClientProfile::compute_only(0, 1.0).unwrap();
        let sizes = [0.15, 0.4, 1.2];
        let m = CostModel::SizeOverCapability;
        assert_eq!(feasible_set(&p, &sizes, 0.5, m), vec![0, 1]);
        assert_eq!(feasible_set(&p, &sizes, 1.2, m), vec![0, 1, 2]);
        assert!(feasible_set(&p, &sizes, 0.1, m).is_empty());
    }

    #[test]
    fn greedy_picks_least_updated_feasible() {
        let p = ClientProfile::compute_only(0, 1.0).unwrap();
        let sizes = [0.15, 0.4, 1.2];
        let mut s = SchedulerState::new(Policy::GreRaa, 0.5, CostModel::SizeOverCapability, 0).unwrap();
        assert_eq!(gre_raa_assign(&mut s, &p, &sizes, &[2, 1, 5]).unwrap(), 1);
        assert!(gre_raa_assign(&mut s, &p, &sizes, &[2, 1, 5]).is_err(), "client busy");
        s.release(0);
        // only fragment 2 is feasible
        let mut s = SchedulerState::new(Policy::GreRaa, 1.2, CostModel::SizeOverCapability, 0).unwrap();
        let big = [2.0, 2.0, 1.2];
        assert_eq!(gre_raa_assign(&mut s, &p, &big, &[0, 0, 9]).unwrap(), 2);
    }

    #[test]
    fn greedy_tie_break_is_seeded() {
        let p = ClientProfile::compute_only(0, 1.0).unwrap();
        let sizes = [0.15, 0.4, 1.2];
        let draw = |seed| {
            let mut s = SchedulerState::new(Policy::GreRaa, 0.5, CostModel::SizeOverCapability, seed).unwrap();
            (0..32)
                .map(|_| {
                    let j = gre_raa_assign(&mut s, &p, &sizes, &[3, 3, 0]).unwrap();
                    s.release(0);
                    j
                })
                .collect::<Vec<_>>()
        };
        assert_eq!(draw(9), draw(9));
        assert!(draw(9).iter().all(|&j| j < 2));
    }

    #[test]
    fn infeasible_client_is_an_error() {
        let p = ClientProfile::compute_only(3, 1.0).unwrap();
        let mut s = SchedulerState::new(Policy::GreRaa, 0.1, CostModel::SizeOverCapability, 0).unwrap();
        let err = gre_raa_assign(&mut s, &p, &[0.15, 0.4], &[0, 0]).unwrap_err();
        assert!(matches!(err, FedError::Infeasible { client: 3, .. }));
        assert!(err.to_string().contains("K too small for client 3"));
        let mut r = SchedulerState::new(Policy::Random, 0.1, CostModel::SizeOverCapability, 0).unwrap();
        assert!(random_assign(&mut r, &p, &[0.15, 0.4]).is_err());
        let mut r = SchedulerState::new(Policy::Random, 0.2, CostModel::SizeOverCapability, 0).unwrap();
        assert_eq!(random_assign(&mut r, &p, &[0.15, 0.4]).unwrap(), 0);
    }

    #[test]
    fn min_priority_ignores_bound() {
        let p = ClientProfile::compute_only(0, 1.0).unwrap();
        let mut s = SchedulerState::new(Policy::MinPriority, 1e-9, CostModel::SizeOverCapability, 0).unwrap();
        for (q, want) in [([4, 1, 1], 1), ([2, 2, 2], 0), ([0, 5, 5], 0)] {
            assert_eq!(s.assign(&p, &[0.2, 0.3, 0.5], &q).unwrap(), want);
            s.release(0);
        }
    }

    #[test]
    fn offline_reference_instance() {
        let profiles = caps(&[4.0, 3.0, 2.0, 1.0]);
        let m = CostModel::SizeOverCapability;
        let off = offline_sorted_assignment(&profiles, &[0.6, 0.4], m).unwrap();
        assert_eq!(off.blocks, vec![vec![0, 1], vec![2, 3]]);
        assert_eq!(off.k, 0.4);
        assert_eq!(brute_force_offline_k(&profiles, &[0.6, 0.4], m).unwrap(), 0.4);
        assert_eq!(brute_force_covering_k(&profiles, &[0.6, 0.4], m).unwrap(), 0.4);
    }

    #[test]
    fn offline_sorts_inputs_and_places_leftovers() {
        // shuffled capabilities, fragments listed smallest first
        let profiles = caps(&[1.0, 5.0, 3.0, 4.0, 2.0]);
        let off = offline_sorted_assignment(&profiles, &[0.2, 0.8], CostModel::SizeOverCapability).unwrap();
        assert_eq!(off.blocks, vec![vec![2, 4, 0], vec![1, 3]]);
        assert_eq!(off.k, 0.2);
    }

    #[test]
    fn offline_fewer_clients_than_fragments() {
        let profiles = caps(&[2.0, 1.0]);
        let off = offline_sorted_assignment(&profiles, &[0.1, 0.2, 0.3, 0.4], CostModel::SizeOverCapability).unwrap();
        assert_eq!(off.blocks, vec![vec![1], vec![0], vec![1], vec![0]]);
        assert_eq!(off.k, 0.3);
    }

    #[test]
    fn offline_symmetric_and_trivial() {
        let m = CostModel::SizeOverCapability;
        let off = offline_sorted_assignment(&caps(&[2.0; 3]), &[0.5; 3], m).unwrap();
        assert_eq!(off.k, 0.25);
        let one = caps(&[3.0]);
        let off = offline_sorted_assignment(&one, &[0.9], m).unwrap();
        assert_eq!(off.k, cost(&one[0], 0.9, m));
        assert_eq!(brute_force_offline_k(&one, &[0.9], m).unwrap(), off.k);
        assert!(offline_sorted_assignment(&[], &[0.9], m).is_err());
    }

    #[test]
    fn covering_can_beat_fixed_blocks() {
        let profiles = caps(&[10.0, 1.0, 1.0, 1.0]);
        let m = CostModel::SizeOverCapability;
        let off = offline_sorted_assignment(&profiles, &[0.6, 0.4], m).unwrap();
        assert_eq!(off.k, 0.6);
        assert_eq!(brute_force_offline_k(&profiles, &[0.6, 0.4], m).unwrap(), 0.6);
        assert_eq!(brute_force_covering_k(&profiles, &[0.6, 0.4], m).unwrap(), 0.4);
    }

    #[test]
    fn brute_force_guards() {
        let m = CostModel::SizeOverCapability;
        assert!(matches!(
            brute_force_offline_k(&caps(&[1.0; 9]), &[0.5, 0.5], m),
            Err(FedError::TooLarge(_))
        ));
        assert!(matches!(
            brute_force_offline_k(&caps(&[1.0; 4]), &[0.2; 5], m),
            Err(FedError::TooLarge(_))
        ));
        assert!(brute_force_offline_k(&caps(&[1.0; 2]), &[0.3, 0.3, 0.4], m).is_err());
    }

    #[test]
    fn bound_validation() {
        let m = CostModel::SizeOverCapability;
        let profiles = caps(&[4.0, 1.0]);
        assert!(validate_bound(&profiles, &[0.6, 0.4], 0.4, m).is_ok());
        assert!(matches!(
            validate_bound(&profiles, &[0.6, 0.4], 0.3, m),
            Err(FedError::Infeasible { client: 1, .. })
        ));
        // fragment 0 costs 0.9 for the fastest client
        assert!(matches!(
            validate_bound(&caps(&[4.0, 4.0]), &[3.6, 0.4], 0.5, m),
            Err(FedError::Config(_))
        ));
    }

    fn instance() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        (1usize..=4).prop_flat_map(|m| {
            (m..=8).prop_flat_map(move |n| {
                (
                    proptest::collection::vec(1u32..=10, n).prop_map(|v| v.into_iter().map(f64::from).collect()),
                    proptest::collection::vec(1u32..=20, m).prop_map(|v| v.into_iter().map(|x| f64::from(x) / 20.0).collect()),
                )
            })
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn sorted_is_optimal_among_fixed_blocks((c, sizes) in instance()) {
            let profiles = caps(&c);
            let m = CostModel::SizeOverCapability;
            let off = offline_sorted_assignment(&profiles, &sizes, m).unwrap();
            let opt = brute_force_offline_k(&profiles, &sizes, m).unwrap();
            let cover = brute_force_covering_k(&profiles, &sizes, m).unwrap();
            prop_assert!(cover <= opt && opt <= off.k);
            if c.len() % sizes.len() == 0 {
                prop_assert_eq!(opt, off.k);
            }
            prop_assert!(validate_bound(&profiles, &sizes, off.k, m).is_ok());
        }

        #[test]
        fn greedy_choice_respects_both_rules(
            c in 0.5f64..5.0,
            sizes in proptest::collection::vec(0.05f64..1.0, 1..6),
            q in proptest::collection::vec(0u64..6, 6),
            k in 0.05f64..2.0,
            seed in 0u64..1000,
        ) {
            let p = ClientProfile::compute_only(0, c).unwrap();
            let m = CostModel::SizeOverCapability;
            let mut s = SchedulerState::new(Policy::GreRaa, k, m, seed).unwrap();
            let feasible = feasible_set(&p, &sizes, k, m);
            match gre_raa_assign(&mut s, &p, &sizes, &q[..sizes.len()]) {
                Ok(j) => {
                    prop_assert!(feasible.contains(&j));
                    prop_assert!(feasible.iter().all(|&f| q[f] >= q[j]));
                }
                Err(_) => prop_assert!(feasible.is_empty()),
            }
        }
    }
}
