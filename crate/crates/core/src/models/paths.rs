use crate::error::{Error, Result};

/// True iff `a - b` never changes strict sign across the shared times.
///
/// Touching (a zero difference) is allowed. Checking breakpoints suffices for
/// linearly interpolated paths since the difference is linear in between.
pub fn check_noncrossing<T: PartialOrd>(a: &[T], b: &[T]) -> Result<bool> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    let mut below = false;
    let mut above = false;
    for (x, y) in a.iter().zip(b) {
        if x < y {
            below = true;
        } else if x > y {
            above = true;
        }
        if below && above {
            return Ok(false);
        }
    }
    Ok(true)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn examples() {
        assert!(check_noncrossing(&[0, 1, 2], &[2, 1, 2]).unwrap());
        assert!(!check_noncrossing(&[0, 2], &[1, 1]).unwrap());
        assert!(check_noncrossing::<i64>(&[], &[]).unwrap());
        assert!(check_noncrossing(&[0.0, 0.5], &[0.0, 0.5]).unwrap());
        assert_eq!(
            check_noncrossing(&[0, 1], &[0]),
            Err(Error::LengthMismatch { left: 2, right: 1 })
        );
    }
}
