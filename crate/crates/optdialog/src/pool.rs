//! Bounded worker pool over scoped threads.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::thread;

/// Applies `f` to every item with at most `parallelism` workers. Results
/// come back in input order whatever the completion order.
pub fn map_ordered<T, R, F>(items: &[T], parallelism: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &T) -> R + Sync,
{
    let workers = parallelism.max(1).min(items.len());
    if workers <= 1 {
        return items.iter().enumerate().map(|(i, t)| f(i, t)).collect();
    }
    let next = AtomicUsize::new(0);
    let mut slots: Vec<Option<R>> = Vec::with_capacity(items.len());
    slots.resize_with(items.len(), || None);
    thread::scope(|scope| {
        let handles: Vec<_> = (0..workers)
            .map(|_| {
                scope.spawn(|| {
                    let mut done = Vec::new();
                    loop {
                        let i = next.fetch_add(1, Ordering::Relaxed);
                        if i >= items.len() {
                            break done;
                        }
                        done.push((i, f(i, &items[i])));
                    }
                })
            })
            .collect();
        for h in handles {
            for (i, r) in h.join().expect("worker panicked") {
                slots[i] = Some(r);
            }
        }
    });
    slots.into_iter().map(|r| r.expect("every index is claimed once")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_preserved() {
        let items: Vec<u64> = (0..200).collect();
        for p in [1, 3, 8, 500] {
            let out = map_ordered(&items, p, |i, &x| {
                if x % 7 == 0 {
                    thread::sleep(std::time::Duration::from_millis(1));
                }
                (i as u64) * 1000 + x * 2
            });
            assert_eq!(out, items.iter().map(|&x| x * 1000 + x * 2).collect::<Vec<_>>());
        }
    }

    #[test]
    fn empty() {
        assert!(map_ordered(&[] as &[u8], 4, |_, &x| x).is_empty());
    }
}
