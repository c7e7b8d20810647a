/// Stable sort by timestamp, then contiguous train/valid/test slices whose
/// boundaries are the rounded cumulative fractions.
pub fn chronological_split<T: Clone>(items: &[T], timestamp: impl Fn(&T) -> i64, fractions: [f64; 3]) -> (Vec<T>, Vec<T>, Vec<T>) {
    let mut sorted: Vec<T> = items.to_vec();
    sorted.sort_by_key(|x| timestamp(x));
    let n = sorted.len() as f64;
    let a = ((n * fractions[0]).round() as usize).min(sorted.len());
    let b = ((n * (fractions[0] + fractions[1])).round() as usize).clamp(a, sorted.len());
    let test = sorted.split_off(b);
    let valid = sorted.split_off(a);
    (sorted, valid, test)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sizes() {
        let v: Vec<(i64, usize)> = (0..10).map(|i| (i, i as usize)).collect();
        let (a, b, c) = chronological_split(&v, |x| x.0, [0.8, 0.1, 0.1]);
        assert_eq!((a.len(), b.len(), c.len()), (8, 1, 1));
    }

    #[test]
    fn equal_timestamps_keep_order() {
        let v: Vec<(i64, usize)> = (0..7).map(|i| (5, i)).collect();
        let (a, b, c) = chronological_split(&v, |x| x.0, [0.5, 0.25, 0.25]);
        let all: Vec<usize> = a.iter().chain(&b).chain(&c).map(|x| x.1).collect();
        assert_eq!(all, (0..7).collect::<Vec<_>>());
    }

    #[test]
    fn shuffled_matches_sort_oracle() {
        let ts = [40, 10, 30, 10, 90, 70, 20, 60, 50, 80];
        let v: Vec<(i64, usize)> = ts.iter().enumerate().map(|(i, &t)| (t, i)).collect();
        let (a, b, c) = chronological_split(&v, |x| x.0, [0.6, 0.2, 0.2]);
        // by hand: 10(1) 10(3) 20(6) 30(2) 40(0) 50(8) | 60(7) 70(5) | 80(9) 90(4)
        assert_eq!(a.iter().map(|x| x.1).collect::<Vec<_>>(), vec![1, 3, 6, 2, 0, 8]);
        assert_eq!(b.iter().map(|x| x.1).collect::<Vec<_>>(), vec![7, 5]);
        assert_eq!(c.iter().map(|x| x.1).collect::<Vec<_>>(), vec![9, 4]);
    }
}
