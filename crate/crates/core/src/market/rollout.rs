use rand::Rng;

use super::{
    CustomerAction, CustomerPolicy, CustomerProfile, CustomerSampler, CustomerState, EnginePolicy, MarketDims,
    PageIndex, Session, StepRecord,
};
use crate::par::map_chunks;
use crate::rng::{stream, Domain, SimRng};

/// Next engine state after the customer responds.
#[derive(Debug, Clone, PartialEq)]
pub struct EngineTransition {
    pub profile: CustomerProfile,
    /// `true` when a new customer replaced the current one.
    pub new_session: bool,
}

/// The engine keeps its state on a page turn and draws a new customer otherwise.
pub fn engine_transition<S: CustomerSampler + ?Sized>(
    profile: &CustomerProfile,
    choice: CustomerAction,
    sampler: &S,
    rng: &mut SimRng,
) -> EngineTransition {
    match choice {
        CustomerAction::TurnPage => EngineTransition {
            profile: profile.clone(),
            new_session: false,
        },
        CustomerAction::Buy | CustomerAction::Leave => EngineTransition {
            profile: sampler.sample(rng),
            new_session: true,
        },
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum CustomerTransition {
    Continue(CustomerState),
    Terminated,
}

/// Customer-view transition.
///
/// Buy terminates; a page turn advances the page (the caller terminates once
/// the page exceeds `max_index`); leave brings a fresh customer and a fresh
/// engine action at page 0.
pub fn customer_transition<E: EnginePolicy + ?Sized, S: CustomerSampler + ?Sized>(
    state: &CustomerState,
    choice: CustomerAction,
    engine: &E,
    sampler: &S,
    rng: &mut SimRng,
) -> CustomerTransition {
    match choice {
        CustomerAction::Buy => CustomerTransition::Terminated,
        CustomerAction::TurnPage => CustomerTransition::Continue(CustomerState {
            profile: state.profile.clone(),
            action: state.action.clone(),
            page: PageIndex(state.page.0 + 1),
        }),
        CustomerAction::Leave => {
            let profile = sampler.sample(rng);
            let action = engine.act(&profile, rng);
            CustomerTransition::Continue(CustomerState {
                profile,
                action,
                page: PageIndex(0),
            })
        }
    }
}

/// Inverse-CDF draw from (buy, turn, leave) probabilities.
pub fn sample_choice(probs: &[f64; 3], rng: &mut SimRng) -> CustomerAction {
    let u: f64 = rng.random();
    if u < probs[0] {
        CustomerAction::Buy
    } else if u < probs[0] + probs[1] {
        CustomerAction::TurnPage
    } else {
        CustomerAction::Leave
    }
}

const CHUNK: usize = 512;

/// Roll out `count` independent customer sessions.
///
/// Session `i` draws everything from its own stream `(seed, i)`, so the
/// output depends only on `seed` and not on chunking or `threads`. Customers
/// in a chunk are advanced in lockstep so policies can batch evaluation.
pub fn rollout_sessions<E, C, S>(
    engine: &E,
    customer: &C,
    sampler: &S,
    count: usize,
    seed: u64,
    dims: MarketDims,
    threads: usize,
) -> Vec<Session>
where
    E: EnginePolicy + ?Sized,
    C: CustomerPolicy + ?Sized,
    S: CustomerSampler + ?Sized,
{
    map_chunks(count, CHUNK, threads, |range| {
        let mut rngs: Vec<SimRng> = range.map(|i| stream(seed, Domain::Session, i as u64)).collect();
        let profiles = sampler.sample_batch(&mut rngs);
        let actions = engine.act_batch(&profiles, &mut rngs);
        let mut sessions: Vec<Session> = profiles
            .into_iter()
            .map(|profile| Session {
                profile,
                steps: Vec::new(),
            })
            .collect();
        let mut active: Vec<usize> = (0..sessions.len()).collect();
        let mut page = 0u32;
        while !active.is_empty() {
            let states: Vec<CustomerState> = active
                .iter()
                .map(|&k| CustomerState {
                    profile: sessions[k].profile.clone(),
                    action: actions[k].clone(),
                    page: PageIndex(page),
                })
                .collect();
            let probs = customer.probs_batch(&states);
            let mut still = Vec::with_capacity(active.len());
            for (&k, p) in active.iter().zip(&probs) {
                let choice = sample_choice(p, &mut rngs[k]);
                sessions[k].steps.push(StepRecord {
                    action: actions[k].clone(),
                    page,
                    choice,
                    reward: (choice == CustomerAction::Buy) as u8,
                    price: None,
                });
                if choice == CustomerAction::TurnPage && page < dims.max_index {
                    still.push(k);
                }
            }
            active = still;
            page += 1;
        }
        sessions
    })
}
