//! Dialog-flow perturbation: swap one utterance for a same-role utterance
//! taken from another dialog.

use rand::Rng;

use super::{Dialog, DialogPair, PairSource, Role};
use crate::error::{Error, Result};
use crate::rng::seeded;

/// Flattened (dialog, turn) references for each role.
struct ReplacementPool<'a> {
    dialogs: &'a [Dialog],
    system: Vec<(usize, usize)>,
    user: Vec<(usize, usize)>,
}

impl<'a> ReplacementPool<'a> {
    fn new(dialogs: &'a [Dialog]) -> Self {
        let mut system = Vec::new();
        let mut user = Vec::new();
        for (d, dialog) in dialogs.iter().enumerate() {
            for (t, turn) in dialog.turns.iter().enumerate() {
                match turn.role {
                    Role::System => system.push((d, t)),
                    Role::User => user.push((d, t)),
                }
            }
        }
        ReplacementPool {
            dialogs,
            system,
            user,
        }
    }

    fn candidates(&self, role: Role) -> &[(usize, usize)] {
        match role {
            Role::System => &self.system,
            Role::User => &self.user,
        }
    }

    fn text(&self, (d, t): (usize, usize)) -> &str {
        &self.dialogs[d].turns[t].text
    }

    /// Uniform draw among same-role turns of other dialogs whose text differs
    /// from `original`.
    fn draw<R: Rng>(
        &self,
        rng: &mut R,
        role: Role,
        exclude_id: &str,
        original: &str,
    ) -> Option<&str> {
        let all = self.candidates(role);
        let usable =
            |&c: &(usize, usize)| self.dialogs[c.0].id != exclude_id && self.text(c) != original;
        if all.is_empty() {
            return None;
        }
        // Rejection sampling keeps the draw uniform over usable candidates;
        // fall back to an explicit filter when most are excluded.
        for _ in 0..64 {
            let c = all[rng.gen_range(0..all.len())];
            if usable(&c) {
                return Some(self.text(c));
            }
        }
        let filtered: Vec<_> = all.iter().copied().filter(usable).collect();
        if filtered.is_empty() {
            None
        } else {
            Some(self.text(filtered[rng.gen_range(0..filtered.len())]))
        }
    }
}

fn perturb_with<R: Rng>(
    dialog: &Dialog,
    pool: &ReplacementPool<'_>,
    role: Role,
    rng: &mut R,
) -> Result<Dialog> {
    let slots: Vec<usize> = dialog.turn_indices(role).collect();
    if slots.is_empty() {
        return Err(Error::NoReplaceableTurn {
            id: dialog.id.clone(),
            role,
        });
    }
    let slot = slots[rng.gen_range(0..slots.len())];
    let replacement = pool
        .draw(rng, role, &dialog.id, &dialog.turns[slot].text)
        .ok_or(Error::PoolTooSmall { role })?;

    let mut fake = dialog.clone();
    fake.turns[slot].text = replacement.to_string();
    fake.rating = None;
    fake.id = format!("{}#fake-{}", dialog.id, role.tag().to_lowercase());
    fake.meta.insert("perturbed_from".into(), dialog.id.clone());
    fake.meta.insert("perturbed_turn".into(), slot.to_string());
    Ok(fake)
}

/// Returns a copy of `dialog` with one uniformly chosen `role` turn replaced
/// by a uniformly chosen `role` turn from another dialog in `pool`.
///
/// The copy carries no rating. Candidates whose text equals the replaced
/// utterance are skipped, so the result always differs in exactly one turn.
pub fn perturb(dialog: &Dialog, pool: &[Dialog], role: Role, seed: u64) -> Result<Dialog> {
    let pool = ReplacementPool::new(pool);
    perturb_with(dialog, &pool, role, &mut seeded(seed))
}

/// Fake dialogs and the real-vs-fake pairs built from them.
#[derive(Debug, Clone, Default)]
pub struct Stage1Pairs {
    pub fakes: Vec<Dialog>,
    pub pairs: Vec<DialogPair>,
}

/// Two real-vs-fake pairs per training dialog: one with a user turn replaced,
/// one with a system turn replaced. The real dialog is always first (`label = 1`).
pub fn make_stage1_pairs(train: &[Dialog], seed: u64) -> Result<Stage1Pairs> {
    if train.len() < 2 {
        return Err(Error::PoolTooSmall { role: Role::User });
    }
    let pool = ReplacementPool::new(train);
    let mut rng = seeded(seed);
    let mut out = Stage1Pairs {
        fakes: Vec::with_capacity(2 * train.len()),
        pairs: Vec::with_capacity(2 * train.len()),
    };
    for dialog in train {
        for role in [Role::User, Role::System] {
            let fake = perturb_with(dialog, &pool, role, &mut rng)?;
            out.pairs.push(DialogPair::new(
                dialog.id.clone(),
                fake.id.clone(),
                true,
                PairSource::Perturbation,
            ));
            out.fakes.push(fake);
        }
    }
    Ok(out)
}
