//! Reusable all-worker rendezvous for BSP supersteps.
//!
//! Unlike `std::sync::Barrier` it can be poisoned: a worker that unwinds
//! releases everyone still waiting instead of leaving them blocked forever.

use std::sync::{Condvar, Mutex};

#[derive(Debug)]
struct State {
    arrived: usize,
    generation: u64,
    poisoned: bool,
}

#[derive(Debug)]
pub(crate) struct SuperstepBarrier {
    parties: usize,
    state: Mutex<State>,
    released: Condvar,
}

/// Another party unwound while we were waiting.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Poisoned;

impl SuperstepBarrier {
    pub(crate) fn new(parties: usize) -> Self {
        Self {
            parties: parties.max(1),
            state: Mutex::new(State {
                arrived: 0,
                generation: 0,
                poisoned: false,
            }),
            released: Condvar::new(),
        }
    }

    pub(crate) fn wait(&self) -> Result<(), Poisoned> {
        let mut state = self.state.lock().unwrap_or_else(|e| e.into_inner());
        if state.poisoned {
            return Err(Poisoned);
        }
        state.arrived += 1;
        if state.arrived == self.parties {
            state.arrived = 0;
            state.generation += 1;
            self.released.notify_all();
            return Ok(());
        }
        let generation = state.generation;
        while state.generation == generation && !state.poisoned {
            state = self.released.wait(state).unwrap_or_else(|e| e.into_inner());
        }
        if state.generation == generation {
            Err(Poisoned)
        } else {
            Ok(())
        }
    }

    pub(crate) fn poison(&self) {
        let mut state = self.state.lock().unwrap_or_else(|e| e.into_inner());
        state.poisoned = true;
        self.released.notify_all();
    }
}

/// Poisons the barrier if dropped during a panic.
pub(crate) struct PoisonOnPanic<'a>(pub(crate) &'a SuperstepBarrier);

impl Drop for PoisonOnPanic<'_> {
    fn drop(&mut self) {
        if std::thread::panicking() {
            self.0.poison();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};

    #[test]
    fn phases_do_not_overlap() {
        let barrier = SuperstepBarrier::new(4);
        let counter = AtomicUsize::new(0);
        std::thread::scope(|s| {
            for _ in 0..4 {
                s.spawn(|| {
                    for phase in 1..=50 {
                        counter.fetch_add(1, Ordering::SeqCst);
                        barrier.wait().unwrap();
                        assert_eq!(counter.load(Ordering::SeqCst), 4 * phase);
                        barrier.wait().unwrap();
                    }
                });
            }
        });
    }

    #[test]
    fn poison_releases_waiters() {
        let barrier = SuperstepBarrier::new(3);
        let outcome = std::thread::scope(|s| {
            let waiter = s.spawn(|| barrier.wait());
            let crasher = s.spawn(|| {
                let _guard = PoisonOnPanic(&barrier);
                panic!("worker failure");
            });
            assert!(crasher.join().is_err());
            waiter.join().unwrap()
        });
        assert_eq!(outcome, Err(Poisoned));
        assert_eq!(barrier.wait(), Err(Poisoned));
    }
}
