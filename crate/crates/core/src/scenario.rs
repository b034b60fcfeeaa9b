//! The advertisement counter.
//!
//! Ads and contracts are add-wins sets. Every ad has a grow-only counter of
//! impressions named `counter:<ad_id>`. The displayable set is derived as
//!
//! ```text
//! ads × contracts → keep (ad, (contract, ad')) with ad = ad' → project to ad
//! ```
//!
//! Clients pick a uniformly random displayable ad for each impression. Once
//! an ad's counter reaches its threshold on a node that holds a retirement
//! trigger, that node removes the ad from the ads set, which removes it from
//! every replica's displayable set as the removal spreads.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use rand::seq::IteratorRandom;
use rand::Rng;
use thiserror::Error;

use crate::crdt::{Delta, Element, Mutation, Variant};
use crate::dataflow::{Condition, DataflowError, Firing, Store, TriggerId};
use crate::encoding::{ActorId, VarId};

pub const ADS: &str = "ads";
pub const CONTRACTS: &str = "contracts";
pub const AD_CONTRACT_PAIRS: &str = "ads-x-contracts";
pub const VALID_PAIRS: &str = "valid-pairs";
pub const DISPLAYABLE: &str = "displayable";
/// Counts impressions made while nothing was displayable, so that the
/// total number of impressions stays exactly predictable.
pub const SPILLOVER: &str = "spillover";

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("ad {0} is listed twice")]
    DuplicateAd(String),
    #[error("contract {0} is listed twice")]
    DuplicateContract(String),
    #[error("ad {0} has a threshold of zero")]
    ZeroThreshold(String),
    #[error(transparent)]
    Dataflow(#[from] DataflowError),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Ad {
    pub id: String,
    /// Minimum number of impressions before the ad is retired.
    pub threshold: u64,
}

impl Ad {
    pub fn counter(&self) -> VarId {
        counter_id(&self.id)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Contract {
    pub id: String,
    pub ad_id: String,
}

pub fn counter_id(ad_id: &str) -> VarId {
    VarId::new(format!("counter:{ad_id}"))
}

fn ad_element(ad_id: &str) -> Element {
    Element::str(ad_id)
}

fn contract_element(contract: &Contract) -> Element {
    Element::tuple([Element::str(&contract.id), Element::str(&contract.ad_id)])
}

/// `ad_count` ads named `ad-00`, `ad-01`, ... each with `contracts_per_ad`
/// contracts and the same threshold.
pub fn default_catalog(
    ad_count: usize,
    contracts_per_ad: usize,
    threshold: u64,
) -> (Vec<Ad>, Vec<Contract>) {
    let ads: Vec<Ad> = (0..ad_count)
        .map(|i| Ad {
            id: format!("ad-{i:02}"),
            threshold,
        })
        .collect();
    let contracts = ads
        .iter()
        .enumerate()
        .flat_map(|(i, ad)| {
            (0..contracts_per_ad).map(move |j| Contract {
                id: format!("contract-{i:02}-{j}"),
                ad_id: ad.id.clone(),
            })
        })
        .collect();
    (ads, contracts)
}

/// Declares the scenario's variables and pipeline in a fresh store and
/// inserts the catalog under `initializer`'s actor.
///
/// Every node runs this with the same arguments and so starts from an
/// identical replica, as if the initializer's inserts had already been
/// disseminated.
pub fn initialize(
    store: &mut Store,
    ads: &[Ad],
    contracts: &[Contract],
    initializer: &ActorId,
) -> Result<(), ScenarioError> {
    let mut seen = BTreeSet::new();
    for ad in ads {
        if !seen.insert(ad.id.as_str()) {
            return Err(ScenarioError::DuplicateAd(ad.id.clone()));
        }
        if ad.threshold == 0 {
            return Err(ScenarioError::ZeroThreshold(ad.id.clone()));
        }
    }
    let mut seen = BTreeSet::new();
    for c in contracts {
        if !seen.insert(c.id.as_str()) {
            return Err(ScenarioError::DuplicateContract(c.id.clone()));
        }
    }

    store.declare(ADS, Variant::AWSet)?;
    store.declare(CONTRACTS, Variant::AWSet)?;
    store.declare(SPILLOVER, Variant::GCounter)?;
    for ad in ads {
        store.declare(ad.counter(), Variant::GCounter)?;
    }

    store.product(ADS, CONTRACTS, AD_CONTRACT_PAIRS)?;
    store.filter(
        AD_CONTRACT_PAIRS,
        Arc::new(|pair: &Element| match pair.as_tuple() {
            Some([ad, contract]) => contract
                .as_tuple()
                .is_some_and(|c| c.len() == 2 && c[1] == *ad),
            _ => false,
        }),
        VALID_PAIRS,
    )?;
    store.map(
        VALID_PAIRS,
        Arc::new(|pair: &Element| pair.as_tuple().expect("valid pairs are tuples")[0].clone()),
        DISPLAYABLE,
    )?;

    for ad in ads {
        store.update(
            ADS,
            &Mutation::Add {
                actor: initializer.clone(),
                element: ad_element(&ad.id),
            },
        )?;
    }
    for c in contracts {
        store.update(
            CONTRACTS,
            &Mutation::Add {
                actor: initializer.clone(),
                element: contract_element(c),
            },
        )?;
    }
    Ok(())
}

/// Ad ids currently displayable on this replica, in canonical order.
pub fn displayable(store: &Store) -> Vec<String> {
    store
        .state(DISPLAYABLE)
        .and_then(|s| s.as_awset())
        .map(|set| {
            set.elements()
                .filter_map(|e| e.as_str().map(str::to_owned))
                .collect()
        })
        .unwrap_or_default()
}

/// Records one impression: a uniformly random displayable ad's counter, or
/// the spillover counter if nothing is displayable. Returns the counter
/// incremented and the delta.
pub fn client_impression<R: Rng + ?Sized>(
    store: &mut Store,
    actor: &ActorId,
    rng: &mut R,
) -> Result<(VarId, Delta), ScenarioError> {
    let target = {
        let set = store
            .state(DISPLAYABLE)
            .and_then(|s| s.as_awset())
            .ok_or_else(|| DataflowError::Unknown(VarId::new(DISPLAYABLE)))?;
        match set.elements().choose(rng).and_then(Element::as_str) {
            Some(ad) => counter_id(ad),
            None => VarId::new(SPILLOVER),
        }
    };
    let delta = store.update(
        target.as_str(),
        &Mutation::Increment {
            actor: actor.clone(),
            amount: 1,
        },
    )?;
    Ok((target, delta))
}

/// Sum of every ad counter plus spillover on this replica.
pub fn grand_total(store: &Store, ads: &[Ad]) -> u64 {
    let value = |id: &str| {
        store
            .state(id)
            .and_then(|s| s.as_gcounter())
            .map_or(0, |c| c.value())
    };
    ads.iter()
        .map(|ad| value(ad.counter().as_str()))
        .sum::<u64>()
        + value(SPILLOVER)
}

/// An ad removed by a trigger on this node.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Retirement {
    pub ad_id: String,
    /// The node's local counter value when the trigger fired.
    pub local_count: u64,
    pub delta: Delta,
}

/// Threshold triggers registered on one node, keyed by trigger.
#[derive(Clone, Debug, Default)]
pub struct RetirementTriggers {
    by_trigger: BTreeMap<TriggerId, Ad>,
}

impl RetirementTriggers {
    /// Registers one trigger per ad on `counter >= threshold`.
    pub fn register(store: &mut Store, ads: &[Ad]) -> Result<Self, ScenarioError> {
        let mut by_trigger = BTreeMap::new();
        for ad in ads {
            let trigger =
                store.read_threshold(ad.counter().as_str(), Condition::AtLeast(ad.threshold))?;
            by_trigger.insert(trigger, ad.clone());
        }
        Ok(Self { by_trigger })
    }

    pub fn len(&self) -> usize {
        self.by_trigger.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_trigger.is_empty()
    }

    /// Removes the ads whose triggers are among `fired` from the ads set.
    /// Firings of other triggers are ignored.
    pub fn retire(
        &self,
        store: &mut Store,
        fired: &[Firing],
    ) -> Result<Vec<Retirement>, ScenarioError> {
        let mut out = Vec::new();
        for firing in fired {
            let Some(ad) = self.by_trigger.get(&firing.trigger) else {
                continue;
            };
            let local_count = store
                .state(ad.counter().as_str())
                .and_then(|s| s.as_gcounter())
                .map_or(0, |c| c.value());
            let delta = store.update(
                ADS,
                &Mutation::Remove {
                    element: ad_element(&ad.id),
                },
            )?;
            out.push(Retirement {
                ad_id: ad.id.clone(),
                local_count,
                delta,
            });
        }
        Ok(out)
    }
}
