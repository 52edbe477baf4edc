#include <iostream>
using namespace std ;
int main ( ){
int n, a = 0, b = 0 ;
cin >> n ;
for (int i = 1;i< = n;i ++) {
cin >> a ;
b = a;
c= b;
} for (int i = 2 ;i <= n;i++)
{
if (a== b)
{
c=a;
}} cout << c << endl ;
return 0 ;
}
