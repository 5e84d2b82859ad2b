//! Traditional slice controller: the slice is known up front and the rate is
//! drawn uniformly from the slice's decision range. No retry, no handover.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::domain::{Mbps, NetworkState, RejectReason, SliceKind, SliceLedger, UserId};
use crate::planning::{Decision, Outcome};

/// Slice assigned to a user at scenario generation.
pub type GroundTruthSlice = SliceKind;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BaselineDecision {
    Admit(Decision),
    Blocked { drawn: Mbps },
}

/// Draws a rate on the slice's integer decision range; admits iff it fits.
pub fn traditional_allocate<R: Rng + ?Sized>(ledger: &SliceLedger, rng: &mut R) -> BaselineDecision {
    let range = ledger.config().decision_range;
    let rate = Mbps(rng.random_range(range.min().0..=range.max().0));
    match ledger.rbs_for(rate) {
        Ok(rbs) if rbs <= ledger.free_rbs() => BaselineDecision::Admit(Decision {
            slice: ledger.kind(),
            rate,
            rbs,
        }),
        _ => BaselineDecision::Blocked { drawn: rate },
    }
}

#[derive(Clone, Debug)]
pub struct TraditionalController {
    rng: ChaCha8Rng,
}

impl TraditionalController {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn handle(&mut self, user: UserId, truth: GroundTruthSlice, state: &mut NetworkState) -> Outcome {
        let Ok(ledger) = state.ledger(truth) else {
            return Outcome::Rejected {
                reason: RejectReason::NoEligibleSlice,
            };
        };
        match traditional_allocate(ledger, &mut self.rng) {
            BaselineDecision::Admit(decision) => {
                state
                    .admit(user, decision.slice, decision.rate)
                    .expect("draw was checked against free RBs");
                Outcome::Admitted {
                    decision,
                    handovers: alloc::vec::Vec::new(),
                }
            }
            BaselineDecision::Blocked { .. } => Outcome::Rejected {
                reason: RejectReason::InsufficientRbs,
            },
        }
    }
}
