//! Deterministic work sharding.

use std::ops::Range;

/// Split `0..n` into fixed chunks, map each chunk (possibly on several
/// threads) and concatenate results in chunk order. Chunk boundaries do not
/// depend on `threads`, so output is identical for any thread count.
pub fn map_chunks<T, F>(n: usize, chunk: usize, threads: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(Range<usize>) -> Vec<T> + Sync,
{
    let chunk = chunk.max(1);
    let ranges: Vec<Range<usize>> = (0..n.div_ceil(chunk)).map(|c| c * chunk..((c + 1) * chunk).min(n)).collect();
    if threads <= 1 || ranges.len() <= 1 {
        return ranges.into_iter().flat_map(&f).collect();
    }
    let mut parts: Vec<Vec<T>> = (0..ranges.len()).map(|_| Vec::new()).collect();
    let next = std::sync::atomic::AtomicUsize::new(0);
    let slots: Vec<std::sync::Mutex<&mut Vec<T>>> = parts.iter_mut().map(std::sync::Mutex::new).collect();
    std::thread::scope(|s| {
        for _ in 0..threads.min(ranges.len()) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                if i >= ranges.len() {
                    break;
                }
                let out = f(ranges[i].clone());
                **slots[i].lock().unwrap() = out;
            });
        }
    });
    drop(slots);
    parts.into_iter().flatten().collect()
}

#[cfg(test)]
mod tests {
    #[test]
    fn order_is_independent_of_threads() {
        let f = |r: std::ops::Range<usize>| r.map(|i| i * i).collect::<Vec<_>>();
        let serial = super::map_chunks(1000, 37, 1, f);
        let parallel = super::map_chunks(1000, 37, 4, f);
        assert_eq!(serial, parallel);
        assert_eq!(serial.len(), 1000);
        assert!(super::map_chunks(0, 8, 2, f).is_empty());
    }
}
