//! Serde adapters that store matrices as nested row arrays and vectors as
//! plain arrays.

pub mod matrix_rows {
    use nalgebra::DMatrix;
    use serde::de::Error as _;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
        m.row_iter().map(|r| r.iter().copied().collect()).collect()
    }

    /// Rebuilds a matrix from rows; `cols` disambiguates zero-row shapes.
    pub fn from_rows(rows: &[Vec<f64>], cols: Option<usize>) -> Result<DMatrix<f64>, String> {
        let ncols = rows.first().map(|r| r.len()).or(cols).unwrap_or(0);
        if rows.iter().any(|r| r.len() != ncols) {
            return Err("ragged matrix rows".into());
        }
        Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
    }

    #[derive(Serialize, Deserialize)]
    struct Shaped {
        rows: usize,
        cols: usize,
        data: Vec<Vec<f64>>,
    }

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        Shaped { rows: m.nrows(), cols: m.ncols(), data: to_rows(m) }.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        let shaped = Shaped::deserialize(d)?;
        let m = from_rows(&shaped.data, Some(shaped.cols)).map_err(D::Error::custom)?;
        if m.nrows() != shaped.rows || m.ncols() != shaped.cols {
            return Err(D::Error::custom("matrix shape does not match its data"));
        }
        Ok(m)
    }
}

pub mod vector {
    use nalgebra::DVector;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &DVector<f64>, s: S) -> Result<S::Ok, S::Error> {
        v.as_slice().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DVector<f64>, D::Error> {
        Ok(DVector::from_vec(Vec::<f64>::deserialize(d)?))
    }
}
