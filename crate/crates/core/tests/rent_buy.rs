//! Break-even behaviour on scripted one-hot-site traces.

mod common;

use common::{play, rent_buy_family, RentBuy};

#[test]
fn overshoot_is_bounded_by_one_interval_of_rent() {
    for s in rent_buy_family() {
        let o = play(&s);
        let per_interval_rent = s.per_interval * 300;
        let tag = format!("pages {} rate {} hot {}", s.pages, s.per_interval, s.hot);
        assert!(o.migrations <= 1, "{tag}: {} migrations", o.migrations);
        assert!(
            o.online <= 2 * o.best_static() + per_interval_rent,
            "{tag}: online {} best {}",
            o.online,
            o.best_static()
        );
        if o.rent_forever <= o.purchase {
            // renting never exceeded buying: the online run must equal staying put
            assert_eq!(o.online, o.rent_forever, "{tag}");
            assert_eq!(o.migrations, 0, "{tag}");
        }
    }
}

#[test]
fn purchase_is_both_sites_moving() {
    let s = RentBuy {
        pages: 16,
        per_interval: 100,
        hot: 3,
        quiet: 1,
    };
    assert_eq!(play(&s).purchase, 2 * 16 * 2000);
}
