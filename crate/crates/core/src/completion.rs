//! Proxy completions: a fixed pool of slots standing in for user completion
//! objects so each transport operation gets its own completion time, while
//! the user's callback still fires exactly once per group.

use std::collections::BTreeMap;
use std::sync::{Mutex, MutexGuard};

pub const DEFAULT_POOL_SIZE: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct GroupId(pub u64);

/// Handle returned by [`CompletionRegistry::acquire`]. The generation
/// distinguishes successive uses of the same slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SlotTicket {
    pub slot: u32,
    generation: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FireDecision {
    pub fired_original: bool,
    /// The user's callback token when `fired_original` is set.
    pub token: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SlotCompletion {
    pub slot: u32,
    pub t: u64,
    pub status: i32,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CompletionError {
    #[error("all {0} proxy slots are in flight")]
    PoolExhausted(usize),
    #[error("slot {0} is not armed")]
    SlotNotArmed(u32),
    #[error("slot {0} completed twice or ticket is stale")]
    DoubleComplete(u32),
    #[error("group {0:?} already has all its operations")]
    GroupFull(GroupId),
    #[error("unknown group {0:?}")]
    UnknownGroup(GroupId),
    #[error("pool size must be at least 1")]
    InvalidConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlotState {
    Free,
    Armed,
    Completed,
}

#[derive(Debug, Clone)]
struct Slot {
    state: SlotState,
    generation: u64,
    group: Option<GroupId>,
    recorded: bool,
    t_complete: Option<u64>,
    status: Option<i32>,
}

#[derive(Debug, Clone)]
struct Group {
    token: u64,
    total: u32,
    remaining: u32,
    acquired: u32,
    fired: bool,
    completions: Vec<SlotCompletion>,
}

#[derive(Debug, Clone)]
struct Inner {
    slots: Vec<Slot>,
    groups: BTreeMap<GroupId, Group>,
    next_group: u64,
    next_generation: u64,
}

#[derive(Debug)]
pub struct CompletionRegistry {
    inner: Mutex<Inner>,
}

impl Clone for CompletionRegistry {
    fn clone(&self) -> Self {
        Self { inner: Mutex::new(self.lock().clone()) }
    }
}

impl Default for CompletionRegistry {
    fn default() -> Self {
        Self::new(DEFAULT_POOL_SIZE).expect("default pool size is valid")
    }
}

impl CompletionRegistry {
    pub fn new(pool_size: usize) -> Result<Self, CompletionError> {
        if pool_size == 0 || pool_size > u32::MAX as usize {
            return Err(CompletionError::InvalidConfig);
        }
        let free = Slot {
            state: SlotState::Free,
            generation: 0,
            group: None,
            recorded: false,
            t_complete: None,
            status: None,
        };
        Ok(Self {
            inner: Mutex::new(Inner {
                slots: vec![free; pool_size],
                groups: BTreeMap::new(),
                next_group: 1,
                next_generation: 1,
            }),
        })
    }

    fn lock(&self) -> MutexGuard<'_, Inner> {
        self.inner.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn pool_size(&self) -> usize {
        self.lock().slots.len()
    }

    /// Registers a user completion shared by `count` operations.
    pub fn register_group(&self, count: u32, token: u64) -> GroupId {
        assert!(count > 0, "a completion group covers at least one operation");
        let mut inner = self.lock();
        let id = GroupId(inner.next_group);
        inner.next_group += 1;
        inner.groups.insert(
            id,
            Group { token, total: count, remaining: count, acquired: 0, fired: false, completions: Vec::new() },
        );
        id
    }

    /// Arms the lowest-numbered free slot for `group`.
    pub fn acquire(&self, group: GroupId) -> Result<SlotTicket, CompletionError> {
        let mut inner = self.lock();
        let pool = inner.slots.len();
        let g = inner.groups.get(&group).ok_or(CompletionError::UnknownGroup(group))?;
        if g.acquired == g.total {
            return Err(CompletionError::GroupFull(group));
        }
        let idx = inner
            .slots
            .iter()
            .position(|s| s.state == SlotState::Free)
            .ok_or(CompletionError::PoolExhausted(pool))?;
        let generation = inner.next_generation;
        inner.next_generation += 1;
        inner.slots[idx] = Slot {
            state: SlotState::Armed,
            generation,
            group: Some(group),
            recorded: false,
            t_complete: None,
            status: None,
        };
        inner.groups.get_mut(&group).expect("checked above").acquired += 1;
        Ok(SlotTicket { slot: idx as u32 + 1, generation })
    }

    /// Proxy callback body: records the time and status, decrements the
    /// group and reports whether the user's callback fires now. A failed
    /// status still counts towards the group.
    pub fn on_complete(&self, ticket: SlotTicket, status: i32, t: u64) -> Result<FireDecision, CompletionError> {
        let mut inner = self.lock();
        let slot = inner
            .slots
            .get(ticket.slot as usize - 1)
            .filter(|_| ticket.slot >= 1)
            .ok_or(CompletionError::SlotNotArmed(ticket.slot))?;
        if slot.generation != ticket.generation {
            return Err(CompletionError::DoubleComplete(ticket.slot));
        }
        Self::complete_locked(&mut inner, ticket.slot, status, t)
    }

    /// Same as [`on_complete`](Self::on_complete) but addressed by bare slot
    /// id, the way the proxy function with that id would be invoked.
    pub fn on_complete_slot(&self, slot: u32, status: i32, t: u64) -> Result<FireDecision, CompletionError> {
        let mut inner = self.lock();
        if slot == 0 || slot as usize > inner.slots.len() {
            return Err(CompletionError::SlotNotArmed(slot));
        }
        Self::complete_locked(&mut inner, slot, status, t)
    }

    fn complete_locked(inner: &mut Inner, slot_id: u32, status: i32, t: u64) -> Result<FireDecision, CompletionError> {
        let slot = &mut inner.slots[slot_id as usize - 1];
        match slot.state {
            SlotState::Free => return Err(CompletionError::SlotNotArmed(slot_id)),
            SlotState::Completed => return Err(CompletionError::DoubleComplete(slot_id)),
            SlotState::Armed => {}
        }
        let group_id = slot.group.expect("armed slots have a group");
        slot.t_complete = Some(t);
        slot.status = Some(status);
        if slot.recorded {
            Self::free_slot(slot);
        } else {
            slot.state = SlotState::Completed;
        }
        let group = inner.groups.get_mut(&group_id).expect("armed slot's group exists");
        group.completions.push(SlotCompletion { slot: slot_id, t, status });
        group.remaining -= 1;
        let fire = group.remaining == 0;
        if fire {
            debug_assert!(!group.fired);
            group.fired = true;
        }
        Ok(FireDecision { fired_original: fire, token: fire.then_some(group.token) })
    }

    /// Called once the operation has been written to the trace. The slot
    /// returns to the pool when both this and the completion happened, in
    /// either order.
    pub fn release(&self, ticket: SlotTicket) -> Result<(), CompletionError> {
        let mut inner = self.lock();
        let slot = inner
            .slots
            .get_mut((ticket.slot as usize).wrapping_sub(1))
            .ok_or(CompletionError::SlotNotArmed(ticket.slot))?;
        if slot.generation != ticket.generation || slot.state == SlotState::Free || slot.recorded {
            return Err(CompletionError::DoubleComplete(ticket.slot));
        }
        match slot.state {
            SlotState::Completed => Self::free_slot(slot),
            _ => slot.recorded = true,
        }
        Ok(())
    }

    fn free_slot(slot: &mut Slot) {
        slot.state = SlotState::Free;
        slot.group = None;
        slot.recorded = false;
    }

    /// Armed slots that have not completed yet.
    pub fn pending(&self) -> Vec<(u32, GroupId)> {
        self.lock()
            .slots
            .iter()
            .enumerate()
            .filter(|(_, s)| s.state == SlotState::Armed)
            .map(|(i, s)| (i as u32 + 1, s.group.expect("armed slots have a group")))
            .collect()
    }

    pub fn slot_state(&self, slot: u32) -> Option<SlotState> {
        self.lock().slots.get((slot as usize).wrapping_sub(1)).map(|s| s.state)
    }

    /// Completion time and status recorded by the slot's latest use.
    pub fn slot_record(&self, slot: u32) -> Option<(u64, i32)> {
        let inner = self.lock();
        let s = inner.slots.get((slot as usize).wrapping_sub(1))?;
        s.t_complete.zip(s.status)
    }

    pub fn group_fired(&self, group: GroupId) -> Option<bool> {
        self.lock().groups.get(&group).map(|g| g.fired)
    }

    pub fn group_remaining(&self, group: GroupId) -> Option<u32> {
        self.lock().groups.get(&group).map(|g| g.remaining)
    }

    pub fn group_completions(&self, group: GroupId) -> Vec<SlotCompletion> {
        self.lock().groups.get(&group).map(|g| g.completions.clone()).unwrap_or_default()
    }
}
